// mrmp: multi-relation message passing for multi-label classification.
// Subcommands cover the full pipeline: label-graph extraction, training,
// evaluation, prediction, the with/without ablation report, dataset
// utilities and an informational forward-pass benchmark.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrmp/commands.hpp"

namespace {

void add_data_flags(CLI::App* cmd, mrmp::RunConfig& run) {
  cmd->add_option("--format", run.format, "Dataset format: sparse | sequence")
      ->check(CLI::IsMember({"sparse", "sequence"}));
  cmd->add_option("--vocab", run.vocab_path, "Vocabulary file (sequence format)");
  cmd->add_option("--labels", run.label_count, "Label count hint for sequence data (0 = infer)");
  cmd->add_option("--max-seq-len", run.max_seq_len, "Token budget per instance");
}

void add_model_flags(CLI::App* cmd, mrmp::RunConfig& run) {
  cmd->add_option("--d-model", run.d_model, "Latent dimensionality");
  cmd->add_option("--enc-layers", run.n_enc_layers, "Encoder layers");
  cmd->add_option("--dec-layers", run.n_dec_layers, "Decoder layers");
  cmd->add_option("--rel-layers", run.n_rel_layers, "Relation-module layers");
  cmd->add_option("--heads", run.n_heads, "Attention heads");
  cmd->add_option("--dropout", run.dropout, "Dropout probability");
  cmd->add_flag("--no-mrmp", run.no_mrmp, "Bypass the multi-relation module (ablation)");
  cmd->add_flag("--no-layer-norm", run.no_layer_norm, "Disable layer norm after residual adds");
  cmd->add_flag("--mean-aggregation", run.relation_mean_aggregation,
                "Average neighbor messages instead of summing");
  cmd->add_flag("--decoder-attend-final", run.decoder_attend_final,
                "All decoder layers attend the final encoder layer");
}

void add_train_flags(CLI::App* cmd, mrmp::RunConfig& run) {
  cmd->add_option("--alpha", run.alpha, "Dependence-test significance level");
  cmd->add_option("--lambda-rel", run.lambda_rel, "Relational loss weight");
  cmd->add_option("--epochs", run.epochs, "Epoch budget");
  cmd->add_option("--batch-size", run.batch_size, "Minibatch size");
  cmd->add_option("--patience", run.patience, "Early-stopping patience (0 disables)");
  cmd->add_option("--lr", run.lr, "Initial learning rate");
  cmd->add_option("--lr-step", run.lr_step, "Learning-rate step size in epochs");
  cmd->add_option("--lr-decay", run.lr_decay, "Learning-rate decay factor");
  cmd->add_option("--clip-norm", run.clip_norm, "Global gradient-norm clip (0 disables)");
  cmd->add_option("--select-metric", run.select_metric, "Validation metric for model selection");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-relation message passing for multi-label classification"};
  app.require_subcommand(1);

  mrmp::RunConfig run;
  std::string data_path, checkpoint, ckpt_with, ckpt_without, graph_path, out_file;
  double threshold = -1.0;
  double train_frac = 0.7, valid_frac = 0.1;
  int n_groups = 4;
  mrmp::BenchArgs bench;

  // --config files are flat key=value; they are loaded before parsing so that
  // command-line flags override file values
  std::string config_path;
  auto add_config_flag = [&config_path](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Flat key=value configuration file");
  };

  auto* build = app.add_subcommand("build-graph", "Extract the pulling/pushing label graph");
  add_config_flag(build);
  add_data_flags(build, run);
  build->add_option("--data", run.train_path, "Training split")->required();
  build->add_option("--alpha", run.alpha, "Dependence-test significance level");
  build->add_option("--seed", run.seed, "Random seed");
  build->add_option("--out", run.out_dir, "Output edge-list file")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  add_config_flag(train);
  add_data_flags(train, run);
  add_model_flags(train, run);
  add_train_flags(train, run);
  train->add_option("--train", run.train_path, "Training split")->required();
  train->add_option("--valid", run.valid_path, "Validation split");
  train->add_option("--graph", run.graph_path, "Precomputed edge list (built on the fly otherwise)");
  train->add_option("--seed", run.seed, "Random seed");
  train->add_option("--out", run.out_dir, "Output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Tune thresholds on validation, report test metrics");
  add_config_flag(evaluate);
  add_data_flags(evaluate, run);
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--valid", run.valid_path, "Validation split")->required();
  evaluate->add_option("--test", run.test_path, "Test split")->required();
  evaluate->add_option("--graph", graph_path, "Edge list for degree columns in the AUC report");
  evaluate->add_option("--threshold-grid", run.threshold_grid, "Grid `lo:step:hi` or comma list");
  evaluate->add_option("--batch-size", run.batch_size, "Inference batch size");
  evaluate->add_option("--out", run.out_dir, "Output directory for metrics.csv / auc.csv");

  auto* predict = app.add_subcommand("predict", "Write per-label scores for a dataset");
  add_config_flag(predict);
  add_data_flags(predict, run);
  predict->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  predict->add_option("--data", data_path, "Dataset to score")->required();
  predict->add_option("--out", out_file, "Output CSV")->required();
  predict->add_option("--threshold", threshold, "Binarize at this threshold instead of raw scores");
  predict->add_option("--batch-size", run.batch_size, "Inference batch size");

  auto* ablation = app.add_subcommand("ablation-report", "Grouped AUC deltas: full model vs --no-mrmp");
  add_config_flag(ablation);
  add_data_flags(ablation, run);
  ablation->add_option("--with", ckpt_with, "Checkpoint of the full model")->required();
  ablation->add_option("--without", ckpt_without, "Checkpoint of the ablation model")->required();
  ablation->add_option("--data", data_path, "Evaluation split")->required();
  ablation->add_option("--graph", graph_path, "Edge list used for degree grouping")->required();
  ablation->add_option("--groups", n_groups, "Number of degree groups");
  ablation->add_option("--batch-size", run.batch_size, "Inference batch size");
  ablation->add_option("--out", run.out_dir, "Output directory");

  auto* split = app.add_subcommand("split", "Seeded train/valid/test split of one file");
  add_config_flag(split);
  add_data_flags(split, run);
  split->add_option("--data", data_path, "Dataset to split")->required();
  split->add_option("--train-frac", train_frac, "Training fraction");
  split->add_option("--valid-frac", valid_frac, "Validation fraction");
  split->add_option("--seed", run.seed, "Random seed");
  split->add_option("--out", run.out_dir, "Output directory")->required();

  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  add_config_flag(stats);
  add_data_flags(stats, run);
  stats->add_option("--data", data_path, "Dataset")->required();

  auto* bench_cmd = app.add_subcommand("bench", "Forward-pass timings over a (N, L) grid");
  bench_cmd->add_option("--seq-lens", bench.seq_lens, "Sequence lengths")->delimiter(',');
  bench_cmd->add_option("--label-counts", bench.label_counts, "Label counts")->delimiter(',');
  bench_cmd->add_option("--d-model", bench.d_model, "Latent dimensionality");
  bench_cmd->add_option("--heads", bench.n_heads, "Attention heads");
  bench_cmd->add_option("--reps", bench.reps, "Repetitions per grid point");

  // apply a config file first, if any, so explicit flags can override it
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    std::string path;
    if (arg == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0) path = arg.substr(9);
    if (!path.empty()) {
      const int code = mrmp::run_command([&] { mrmp::load_config_file(path, run); });
      if (code != 0) return code;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  run.lambda_rel_given = run.lambda_rel_given || train->count("--lambda-rel") > 0;

  if (build->parsed()) return mrmp::run_command([&] { mrmp::cmd_build_graph(run); });
  if (train->parsed()) return mrmp::run_command([&] { mrmp::cmd_train(run); });
  if (evaluate->parsed()) {
    return mrmp::run_command([&] {
      mrmp::EvaluateArgs args{checkpoint, graph_path};
      mrmp::cmd_evaluate(run, args);
    });
  }
  if (predict->parsed()) {
    return mrmp::run_command([&] { mrmp::cmd_predict(run, checkpoint, data_path, out_file, threshold); });
  }
  if (ablation->parsed()) {
    return mrmp::run_command(
        [&] { mrmp::cmd_ablation_report(run, ckpt_with, ckpt_without, data_path, graph_path, n_groups); });
  }
  if (split->parsed()) {
    return mrmp::run_command([&] { mrmp::cmd_split(run, data_path, train_frac, valid_frac); });
  }
  if (stats->parsed()) return mrmp::run_command([&] { mrmp::cmd_stats(run, data_path); });
  if (bench_cmd->parsed()) return mrmp::run_command([&] { mrmp::cmd_bench(bench); });
  return 2;
}
