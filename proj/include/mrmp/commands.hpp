#pragma once

#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mrmp/baseline.hpp"
#include "mrmp/checkpoint.hpp"
#include "mrmp/data.hpp"
#include "mrmp/metrics.hpp"
#include "mrmp/relgraph.hpp"
#include "mrmp/train.hpp"

namespace mrmp {

// Everything a run can configure, with defaults from the experimental setup
// this artifact follows. Command-line flags override config-file values,
// which override these defaults.
struct RunConfig {
  // data
  std::string format = "sparse";  // sparse | sequence
  std::string train_path, valid_path, test_path, vocab_path, graph_path;
  int label_count = 0;  // sequence-format hint; 0 = infer
  // model
  int d_model = 512;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_rel_layers = 2;
  int n_heads = 4;
  double dropout = 0.2;
  int max_seq_len = 500;
  bool no_mrmp = false;
  bool no_layer_norm = false;
  bool relation_mean_aggregation = false;
  bool decoder_attend_final = false;
  // graph + loss
  double alpha = 0.05;
  double lambda_rel = 1.0;
  bool lambda_rel_given = false;  // set when the user passed --lambda-rel
  // training
  int epochs = 50;
  int batch_size = 32;
  int patience = 10;
  double lr = 2e-4;
  int lr_step = 10;
  double lr_decay = 0.9;
  double clip_norm = 5.0;
  std::uint64_t seed = 42;
  std::string select_metric = "ebF1";
  std::string threshold_grid = "0.05:0.05:0.95";
  std::string out_dir = "out";
};

namespace detail {

inline std::string fmt_g(double v, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

}  // namespace detail

// Flat key=value configuration file; keys are the command-line flag names
// without the leading dashes. Values set here are overridden by flags.
inline void apply_config_entry(RunConfig& run, const std::string& key, const std::string& value) {
  auto as_int = [&](const char* what) {
    try {
      return std::stoi(value);
    } catch (const std::exception&) {
      throw config_error(std::string("config: bad integer for ") + what + ": " + value);
    }
  };
  auto as_double = [&](const char* what) {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw config_error(std::string("config: bad number for ") + what + ": " + value);
    }
  };
  auto as_bool = [&]() { return value == "1" || value == "true" || value == "yes" || value == "on"; };

  if (key == "format") run.format = value;
  else if (key == "train") run.train_path = value;
  else if (key == "valid") run.valid_path = value;
  else if (key == "test") run.test_path = value;
  else if (key == "vocab") run.vocab_path = value;
  else if (key == "graph") run.graph_path = value;
  else if (key == "labels") run.label_count = as_int("labels");
  else if (key == "d-model") run.d_model = as_int("d-model");
  else if (key == "enc-layers") run.n_enc_layers = as_int("enc-layers");
  else if (key == "dec-layers") run.n_dec_layers = as_int("dec-layers");
  else if (key == "rel-layers") run.n_rel_layers = as_int("rel-layers");
  else if (key == "heads") run.n_heads = as_int("heads");
  else if (key == "dropout") run.dropout = as_double("dropout");
  else if (key == "max-seq-len") run.max_seq_len = as_int("max-seq-len");
  else if (key == "no-mrmp") run.no_mrmp = as_bool();
  else if (key == "no-layer-norm") run.no_layer_norm = as_bool();
  else if (key == "mean-aggregation") run.relation_mean_aggregation = as_bool();
  else if (key == "decoder-attend-final") run.decoder_attend_final = as_bool();
  else if (key == "alpha") run.alpha = as_double("alpha");
  else if (key == "lambda-rel") {
    run.lambda_rel = as_double("lambda-rel");
    run.lambda_rel_given = true;
  } else if (key == "epochs") run.epochs = as_int("epochs");
  else if (key == "batch-size") run.batch_size = as_int("batch-size");
  else if (key == "patience") run.patience = as_int("patience");
  else if (key == "lr") run.lr = as_double("lr");
  else if (key == "lr-step") run.lr_step = as_int("lr-step");
  else if (key == "lr-decay") run.lr_decay = as_double("lr-decay");
  else if (key == "clip-norm") run.clip_norm = as_double("clip-norm");
  else if (key == "seed") run.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "select-metric") run.select_metric = value;
  else if (key == "threshold-grid") run.threshold_grid = value;
  else if (key == "out") run.out_dir = value;
  else throw config_error("config: unknown key `" + key + "`");
}

inline void load_config_file(const std::string& path, RunConfig& run) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw config_error("config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_config_entry(run, detail::trim(trimmed.substr(0, eq)), detail::trim(trimmed.substr(eq + 1)));
  }
}

inline Metric parse_metric(const std::string& name) {
  std::string low;
  for (char c : name) low += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (low == "acc") return Metric::acc;
  if (low == "ebf1") return Metric::ebf1;
  if (low == "mif1") return Metric::mif1;
  if (low == "maf1") return Metric::maf1;
  throw config_error("unknown metric `" + name + "` (expected ACC, ebF1, miF1 or maF1)");
}

// Accepts `lo:step:hi` or a comma-separated list.
inline std::vector<double> parse_threshold_grid(const std::string& text) {
  std::vector<double> grid;
  try {
    if (text.find(':') != std::string::npos) {
      std::istringstream ss(text);
      std::string lo_s, step_s, hi_s;
      if (!std::getline(ss, lo_s, ':') || !std::getline(ss, step_s, ':') || !std::getline(ss, hi_s)) {
        throw config_error("threshold grid must be `lo:step:hi` or a comma list");
      }
      const double lo = std::stod(lo_s), step = std::stod(step_s), hi = std::stod(hi_s);
      if (step <= 0 || lo <= 0 || hi >= 1 || lo > hi) {
        throw config_error("threshold grid must satisfy 0 < lo <= hi < 1 with positive step");
      }
      for (int k = 0;; ++k) {
        const double t = lo + k * step;
        if (t > hi + 1e-12) break;
        grid.push_back(t);
      }
    } else {
      std::istringstream ss(text);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        const double t = std::stod(tok);
        if (t <= 0 || t >= 1) throw config_error("thresholds must lie in (0,1)");
        grid.push_back(t);
      }
    }
  } catch (const std::invalid_argument&) {
    throw config_error("cannot parse threshold grid `" + text + "`");
  }
  if (grid.empty()) throw config_error("threshold grid is empty");
  return grid;
}

inline Dataset load_dataset(const RunConfig& run, const std::string& path) {
  if (run.format == "sparse") return parse_sparse_dataset(path, run.max_seq_len);
  if (run.format == "sequence") {
    if (run.vocab_path.empty()) throw config_error("sequence format requires --vocab");
    return parse_sequence_dataset(path, run.vocab_path, run.max_seq_len, run.label_count);
  }
  throw config_error("unknown dataset format `" + run.format + "` (expected sparse or sequence)");
}

inline ModelConfig model_config_from(const RunConfig& run, const Dataset& ds) {
  ModelConfig cfg;
  cfg.d_model = run.d_model;
  cfg.n_enc_layers = run.n_enc_layers;
  cfg.n_dec_layers = run.n_dec_layers;
  cfg.n_rel_layers = run.n_rel_layers;
  cfg.n_heads = run.n_heads;
  cfg.dropout = run.dropout;
  cfg.max_seq_len = run.max_seq_len;
  cfg.vocab_size = ds.vocab_size;
  cfg.label_count = ds.label_count;
  cfg.positional_encoding = ds.input_type == InputType::sequential;
  cfg.mrmp_enabled = !run.no_mrmp;
  cfg.layer_norm = !run.no_layer_norm;
  cfg.relation_mean_aggregation = run.relation_mean_aggregation;
  cfg.decoder_layer_aligned = !run.decoder_attend_final;
  return cfg;
}

// The relational loss belongs to the relation module: the ablation drops both
// unless the user pinned lambda explicitly.
inline double effective_lambda(const RunConfig& run) {
  if (run.no_mrmp && !run.lambda_rel_given) return 0.0;
  return run.lambda_rel;
}

inline std::string echo_config(const RunConfig& run) {
  std::ostringstream os;
  os << "format=" << run.format << "\n";
  os << "train=" << run.train_path << "\n";
  os << "valid=" << run.valid_path << "\n";
  os << "test=" << run.test_path << "\n";
  os << "vocab=" << run.vocab_path << "\n";
  os << "graph=" << run.graph_path << "\n";
  os << "label_count=" << run.label_count << "\n";
  os << "d_model=" << run.d_model << "\n";
  os << "n_enc_layers=" << run.n_enc_layers << "\n";
  os << "n_dec_layers=" << run.n_dec_layers << "\n";
  os << "n_rel_layers=" << run.n_rel_layers << "\n";
  os << "n_heads=" << run.n_heads << "\n";
  os << "dropout=" << detail::fmt_g(run.dropout) << "\n";
  os << "max_seq_len=" << run.max_seq_len << "\n";
  os << "no_mrmp=" << (run.no_mrmp ? 1 : 0) << "\n";
  os << "no_layer_norm=" << (run.no_layer_norm ? 1 : 0) << "\n";
  os << "relation_mean_aggregation=" << (run.relation_mean_aggregation ? 1 : 0) << "\n";
  os << "decoder_attend_final=" << (run.decoder_attend_final ? 1 : 0) << "\n";
  os << "alpha=" << detail::fmt_g(run.alpha) << "\n";
  os << "lambda_rel=" << detail::fmt_g(effective_lambda(run)) << "\n";
  os << "epochs=" << run.epochs << "\n";
  os << "batch_size=" << run.batch_size << "\n";
  os << "patience=" << run.patience << "\n";
  os << "lr=" << detail::fmt_g(run.lr) << "\n";
  os << "lr_step=" << run.lr_step << "\n";
  os << "lr_decay=" << detail::fmt_g(run.lr_decay) << "\n";
  os << "clip_norm=" << detail::fmt_g(run.clip_norm) << "\n";
  os << "seed=" << run.seed << "\n";
  os << "select_metric=" << run.select_metric << "\n";
  os << "threshold_grid=" << run.threshold_grid << "\n";
  os << "out=" << run.out_dir << "\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot write " + path);
  os << content;
}

// ---------------------------------------------------------------------------
// build-graph

struct GraphSummary {
  std::int64_t pulling_edges = 0;
  std::int64_t pushing_edges = 0;
  std::int64_t pairs_tested = 0;
};

inline GraphSummary cmd_build_graph(const RunConfig& run, std::ostream& out = std::cout) {
  const Dataset ds = load_dataset(run, run.train_path);
  const LabelBitsets y = label_bitsets(ds);
  bool any_varies = false;
  for (int j = 0; j < y.labels() && !any_varies; ++j) {
    const std::int64_t c = y.count(j);
    any_varies = c > 0 && c < static_cast<std::int64_t>(ds.size());
  }
  if (!any_varies) throw degenerate_data_error("every label is constant; no dependence structure to test");

  RelationGraphBuild build = build_relation_graphs(y, run.alpha);
  const std::string out_path = run.out_dir.empty() ? "graph.txt" : run.out_dir;
  write_edge_list(build.graph, out_path);

  GraphSummary s;
  s.pulling_edges = build.graph.edge_count_plus();
  s.pushing_edges = build.graph.edge_count_minus();
  s.pairs_tested = build.pairs_tested;
  out << "labels=" << build.graph.labels << " alpha=" << detail::fmt_g(run.alpha) << "\n";
  out << "pairs_tested=" << s.pairs_tested << "\n";
  out << "pulling_edges=" << s.pulling_edges << "\n";
  out << "pushing_edges=" << s.pushing_edges << "\n";
  for (int rel = 0; rel < 2; ++rel) {
    std::map<int, int> hist;
    for (int i = 0; i < build.graph.labels; ++i) {
      ++hist[rel == 0 ? build.graph.degree_plus(i) : build.graph.degree_minus(i)];
    }
    out << (rel == 0 ? "degree_hist_pulling=" : "degree_hist_pushing=");
    bool first = true;
    for (const auto& [deg, count] : hist) {
      if (!first) out << " ";
      out << deg << ":" << count;
      first = false;
    }
    out << "\n";
  }
  out << "graph_file=" << out_path << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// train

inline std::string format_log_csv(const std::vector<EpochRow>& log) {
  std::ostringstream os;
  os << "epoch,l_bce,l_rel,total,lr,val_acc,val_ebf1,val_mif1,val_maf1\n";
  for (const EpochRow& r : log) {
    os << r.epoch << "," << detail::fmt_g(r.bce) << "," << detail::fmt_g(r.rel) << ","
       << detail::fmt_g(r.total) << "," << detail::fmt_g(r.lr);
    if (r.has_val) {
      os << "," << detail::fmt_g(r.val.acc) << "," << detail::fmt_g(r.val.ebf1) << ","
         << detail::fmt_g(r.val.mif1) << "," << detail::fmt_g(r.val.maf1);
    } else {
      os << ",,,,";
    }
    os << "\n";
  }
  return os.str();
}

struct TrainOutputs {
  std::string checkpoint_dir;
  std::string log_path;
  std::string graph_path;
  TrainResult result;
};

inline TrainOutputs cmd_train(const RunConfig& run, std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  if (run.train_path.empty()) throw config_error("train: --train is required");
  const Dataset train = load_dataset(run, run.train_path);
  Dataset valid;
  const bool has_valid = !run.valid_path.empty();
  if (has_valid) {
    valid = load_dataset(run, run.valid_path);
    if (valid.label_count != train.label_count) {
      throw mismatch_error("train/valid label counts disagree");
    }
  }

  std::error_code ec;
  fs::create_directories(run.out_dir, ec);
  if (ec) throw io_error("cannot create output directory " + run.out_dir);

  TrainOutputs outputs;
  RelationGraph graph(train.label_count, run.alpha);
  if (!run.graph_path.empty()) {
    graph = read_edge_list(run.graph_path);
    if (graph.labels != train.label_count) {
      throw mismatch_error("graph declares " + std::to_string(graph.labels) + " labels, dataset has " +
                           std::to_string(train.label_count));
    }
    outputs.graph_path = run.graph_path;
  } else {
    graph = build_relation_graphs(label_bitsets(train), run.alpha).graph;
    outputs.graph_path = (fs::path(run.out_dir) / "graph.txt").string();
    write_edge_list(graph, outputs.graph_path);
  }

  TrainConfig cfg;
  cfg.model = model_config_from(run, train);
  cfg.schedule = LrSchedule{run.lr, run.lr_step, run.lr_decay};
  cfg.lambda_rel = effective_lambda(run);
  cfg.batch_size = run.batch_size;
  cfg.epochs = run.epochs;
  cfg.patience = run.patience;
  cfg.clip_norm = run.clip_norm;
  cfg.seed = run.seed;
  cfg.select_metric = parse_metric(run.select_metric);

  write_text_file((fs::path(run.out_dir) / "config.txt").string(), echo_config(run));

  TrainResult result = train_model(cfg, train, has_valid ? &valid : nullptr, graph, &out);

  outputs.log_path = (fs::path(run.out_dir) / "train_log.csv").string();
  write_text_file(outputs.log_path, format_log_csv(result.log));

  outputs.checkpoint_dir = (fs::path(run.out_dir) / "checkpoint_best").string();
  CheckpointMeta meta;
  meta.epoch = result.best_epoch;
  if (result.best_epoch >= 0 && result.best_epoch < static_cast<int>(result.log.size()) &&
      result.log[static_cast<std::size_t>(result.best_epoch)].has_val) {
    const EvalScores& v = result.log[static_cast<std::size_t>(result.best_epoch)].val;
    meta.metrics = {{"val_acc", v.acc}, {"val_ebf1", v.ebf1}, {"val_mif1", v.mif1}, {"val_maf1", v.maf1}};
  }
  meta.run = {{"seed", run.seed},
              {"alpha", run.alpha},
              {"lambda_rel", effective_lambda(run)},
              {"format", run.format},
              {"graph", outputs.graph_path}};
  save_checkpoint(result.params, cfg.model, meta, outputs.checkpoint_dir, &graph);

  out << "best_epoch=" << result.best_epoch << "\n";
  if (result.best_epoch >= 0 && !result.log.empty() &&
      result.log[std::min<std::size_t>(static_cast<std::size_t>(result.best_epoch), result.log.size() - 1)].has_val) {
    out << "best_val_" << run.select_metric << "=" << detail::fmt_g(result.best_value) << "\n";
  }
  out << "checkpoint=" << outputs.checkpoint_dir << "\n";
  out << "log=" << outputs.log_path << "\n";
  outputs.result = std::move(result);
  return outputs;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string graph_path;  // optional, adds degree columns to the AUC report
};

struct EvaluateReport {
  EvalScores test;                       // each metric at its own tuned threshold
  std::map<std::string, double> thresholds;
  AucReport auc;
};

inline EvaluateReport cmd_evaluate(const RunConfig& run, const EvaluateArgs& args,
                                   std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  if (run.valid_path.empty() || run.test_path.empty()) {
    throw config_error("evaluate: --valid and --test are required");
  }
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  RunConfig data_run = run;
  data_run.max_seq_len = ckpt.config.max_seq_len;
  const Dataset valid = load_dataset(data_run, run.valid_path);
  const Dataset test = load_dataset(data_run, run.test_path);
  if (valid.label_count != ckpt.config.label_count || test.label_count != ckpt.config.label_count) {
    throw mismatch_error("checkpoint was trained for " + std::to_string(ckpt.config.label_count) +
                         " labels, dataset has " + std::to_string(valid.label_count));
  }
  if (valid.vocab_size != ckpt.config.vocab_size || test.vocab_size != ckpt.config.vocab_size) {
    throw mismatch_error("checkpoint vocabulary size does not match the dataset");
  }

  RelationGraph graph = ckpt.graph;  // the graph the model was trained with
  if (!args.graph_path.empty()) {
    graph = read_edge_list(args.graph_path);
    if (graph.labels != ckpt.config.label_count) throw mismatch_error("graph label count mismatch");
  }
  GraphTensors<float> gt = make_graph_tensors<float>(graph, ckpt.config.relation_mean_aggregation);

  const std::vector<double> grid = parse_threshold_grid(run.threshold_grid);
  const std::vector<float> val_scores = predict_scores(ckpt.params, ckpt.config, gt, valid, run.batch_size);
  const std::vector<float> test_scores = predict_scores(ckpt.params, ckpt.config, gt, test, run.batch_size);
  const std::vector<std::uint8_t> y_val = label_matrix(valid);
  const std::vector<std::uint8_t> y_test = label_matrix(test);
  const std::size_t l = static_cast<std::size_t>(ckpt.config.label_count);

  EvaluateReport report;
  std::ostringstream metrics_csv;
  metrics_csv << "metric,value,threshold\n";
  for (Metric metric : {Metric::acc, Metric::ebf1, Metric::mif1, Metric::maf1}) {
    const ThresholdChoice choice = tune_threshold(y_val, val_scores, valid.size(), l, metric, grid);
    const EvalScores s = evaluate(y_test, binarize(test_scores, choice.threshold), test.size(), l);
    const double value = s.get(metric);
    switch (metric) {
      case Metric::acc: report.test.acc = value; break;
      case Metric::ebf1: report.test.ebf1 = value; break;
      case Metric::mif1: report.test.mif1 = value; break;
      case Metric::maf1: report.test.maf1 = value; break;
    }
    report.thresholds[metric_name(metric)] = choice.threshold;
    metrics_csv << metric_name(metric) << "," << detail::fmt_g(value) << ","
                << detail::fmt_g(choice.threshold) << "\n";
    out << metric_name(metric) << "=" << detail::fmt_g(value)
        << " (threshold=" << detail::fmt_g(choice.threshold) << ")\n";
  }

  report.auc = auc_per_label(y_test, test_scores, test.size(), l);
  std::ostringstream auc_csv;
  auc_csv << "label,auc,degree_plus,degree_minus\n";
  for (std::size_t j = 0; j < l; ++j) {
    auc_csv << j << ",";
    if (report.auc.defined[j]) auc_csv << detail::fmt_g(report.auc.auc[j]);
    auc_csv << "," << graph.degree_plus(static_cast<int>(j)) << ","
            << graph.degree_minus(static_cast<int>(j)) << "\n";
  }
  out << "mean_auc=" << detail::fmt_g(report.auc.mean_defined()) << "\n";

  if (!run.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(run.out_dir, ec);
    if (ec) throw io_error("cannot create output directory " + run.out_dir);
    write_text_file((fs::path(run.out_dir) / "metrics.csv").string(), metrics_csv.str());
    write_text_file((fs::path(run.out_dir) / "auc.csv").string(), auc_csv.str());
    write_text_file((fs::path(run.out_dir) / "config.txt").string(), echo_config(run));
  }
  return report;
}

// ---------------------------------------------------------------------------
// predict

inline void cmd_predict(const RunConfig& run, const std::string& checkpoint,
                        const std::string& data_path, const std::string& out_path,
                        double threshold = -1.0) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  RunConfig data_run = run;
  data_run.max_seq_len = ckpt.config.max_seq_len;
  const Dataset ds = load_dataset(data_run, data_path);
  if (ds.label_count != ckpt.config.label_count || ds.vocab_size != ckpt.config.vocab_size) {
    throw mismatch_error("checkpoint and dataset dimensions disagree");
  }
  GraphTensors<float> gt = ckpt.graph_tensors();
  const std::vector<float> scores = predict_scores(ckpt.params, ckpt.config, gt, ds, run.batch_size);

  std::ofstream os(out_path);
  if (!os) throw io_error("cannot write " + out_path);
  os << "instance";
  for (int j = 0; j < ckpt.config.label_count; ++j) os << ",label" << j;
  os << "\n";
  const std::size_t l = static_cast<std::size_t>(ckpt.config.label_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << i;
    for (std::size_t j = 0; j < l; ++j) {
      const float s = scores[i * l + j];
      if (threshold > 0.0) os << "," << (s > threshold ? 1 : 0);
      else os << "," << detail::fmt_g(s, 6);
    }
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// ablation-report

struct AblationRow {
  std::string relation;  // pulling | pushing
  int group = 0;
  int min_degree = -1;
  int max_degree = -1;
  int labels = 0;
  double mean_delta_auc = 0.0;
  bool has_mean = false;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // n_groups rows per relation
  std::vector<double> delta_auc;  // per label; NaN when undefined in either model
};

inline AblationReport cmd_ablation_report(const RunConfig& run, const std::string& ckpt_with,
                                          const std::string& ckpt_without, const std::string& data_path,
                                          const std::string& graph_path, int n_groups = 4,
                                          std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  Checkpoint with = load_checkpoint(ckpt_with);
  Checkpoint without = load_checkpoint(ckpt_without);
  if (with.config.label_count != without.config.label_count) {
    throw mismatch_error("the two checkpoints predict different label sets");
  }
  RunConfig data_run = run;
  data_run.max_seq_len = with.config.max_seq_len;
  const Dataset ds = load_dataset(data_run, data_path);
  if (ds.label_count != with.config.label_count) {
    throw mismatch_error("dataset label count does not match the checkpoints");
  }
  const RelationGraph graph = read_edge_list(graph_path);
  if (graph.labels != ds.label_count) throw mismatch_error("graph label count mismatch");

  GraphTensors<float> gt_with = with.graph_tensors();
  GraphTensors<float> gt_without = without.graph_tensors();
  const std::vector<std::uint8_t> y = label_matrix(ds);
  const std::size_t l = static_cast<std::size_t>(ds.label_count);
  const AucReport auc_with = auc_per_label(
      y, predict_scores(with.params, with.config, gt_with, ds, run.batch_size), ds.size(), l);
  const AucReport auc_without = auc_per_label(
      y, predict_scores(without.params, without.config, gt_without, ds, run.batch_size), ds.size(), l);

  AblationReport report;
  report.delta_auc.assign(l, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < l; ++j) {
    if (auc_with.defined[j] && auc_without.defined[j]) {
      report.delta_auc[j] = auc_with.auc[j] - auc_without.auc[j];
    }
  }

  std::ostringstream csv;
  csv << "relation,group,min_degree,max_degree,labels,mean_delta_auc\n";
  for (int rel = 0; rel < 2; ++rel) {
    std::vector<int> degrees(l);
    for (std::size_t j = 0; j < l; ++j) {
      degrees[j] = rel == 0 ? graph.degree_plus(static_cast<int>(j))
                            : graph.degree_minus(static_cast<int>(j));
    }
    const DegreeGroups groups = node_degree_groups(degrees, n_groups);
    for (int g = 0; g < n_groups; ++g) {
      AblationRow row;
      row.relation = rel == 0 ? "pulling" : "pushing";
      row.group = g;
      row.min_degree = groups.min_degree[static_cast<std::size_t>(g)];
      row.max_degree = groups.max_degree[static_cast<std::size_t>(g)];
      double sum = 0.0;
      int count = 0;
      for (std::size_t j = 0; j < l; ++j) {
        if (groups.group_of_label[j] == g && !std::isnan(report.delta_auc[j])) {
          sum += report.delta_auc[j];
          ++count;
        }
      }
      row.labels = count;
      if (count > 0) {
        row.mean_delta_auc = sum / count;
        row.has_mean = true;
      }
      report.rows.push_back(row);
      csv << row.relation << "," << row.group << "," << row.min_degree << "," << row.max_degree
          << "," << row.labels << ",";
      if (row.has_mean) csv << detail::fmt_g(row.mean_delta_auc);
      csv << "\n";
    }
  }
  out << csv.str();
  if (!run.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(run.out_dir, ec);
    if (ec) throw io_error("cannot create output directory " + run.out_dir);
    write_text_file((fs::path(run.out_dir) / "ablation.csv").string(), csv.str());
    write_text_file((fs::path(run.out_dir) / "config.txt").string(), echo_config(run));
    std::ostringstream per_label;
    per_label << "label,delta_auc,degree_plus,degree_minus\n";
    for (std::size_t j = 0; j < l; ++j) {
      per_label << j << ",";
      if (!std::isnan(report.delta_auc[j])) per_label << detail::fmt_g(report.delta_auc[j]);
      per_label << "," << graph.degree_plus(static_cast<int>(j)) << ","
                << graph.degree_minus(static_cast<int>(j)) << "\n";
    }
    write_text_file((fs::path(run.out_dir) / "delta_auc.csv").string(), per_label.str());
  }
  return report;
}

// ---------------------------------------------------------------------------
// split

inline void cmd_split(const RunConfig& run, const std::string& data_path, double train_frac,
                      double valid_frac, std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(run.out_dir, ec);
  if (ec) throw io_error("cannot create output directory " + run.out_dir);
  if (run.format == "sparse") {
    const Dataset ds = parse_sparse_dataset(data_path, run.max_seq_len);
    const std::vector<Dataset> parts = split_dataset(ds, train_frac, valid_frac, run.seed);
    const char* names[] = {"train.txt", "valid.txt", "test.txt"};
    for (int i = 0; i < 3; ++i) {
      const std::string path = (fs::path(run.out_dir) / names[i]).string();
      serialize_sparse_dataset(parts[static_cast<std::size_t>(i)], path);
      out << names[i] << "=" << parts[static_cast<std::size_t>(i)].size() << "\n";
    }
  } else if (run.format == "sequence") {
    std::ifstream is(data_path);
    if (!is) throw io_error("cannot open dataset: " + data_path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) lines.push_back(line);
    }
    Rng rng(run.seed);
    rng.shuffle(lines);
    const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(lines.size()));
    const std::size_t n_valid = static_cast<std::size_t>(valid_frac * static_cast<double>(lines.size()));
    const char* names[] = {"train.txt", "valid.txt", "test.txt"};
    std::size_t counts[3] = {0, 0, 0};
    std::ofstream files[3];
    for (int i = 0; i < 3; ++i) files[i].open(fs::path(run.out_dir) / names[i]);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const int part = k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2);
      files[part] << lines[k] << "\n";
      ++counts[part];
    }
    for (int i = 0; i < 3; ++i) out << names[i] << "=" << counts[i] << "\n";
  } else {
    throw config_error("unknown dataset format `" + run.format + "`");
  }
}

// ---------------------------------------------------------------------------
// stats

inline DatasetStats cmd_stats(const RunConfig& run, const std::string& data_path,
                              std::ostream& out = std::cout) {
  const Dataset ds = load_dataset(run, data_path);
  const DatasetStats s = dataset_stats(ds);
  out << "instances=" << s.instances << "\n";
  out << "labels=" << s.labels << "\n";
  out << "features=" << s.features << "\n";
  out << "cardinality=" << detail::fmt_g(s.cardinality, 6) << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::vector<int> seq_lens{64, 128, 256};
  std::vector<int> label_counts{50, 200};
  int d_model = 128;
  int n_heads = 4;
  int reps = 3;
  std::uint64_t seed = 1;
};

inline void cmd_bench(const BenchArgs& args, std::ostream& out = std::cout) {
  using clock = std::chrono::steady_clock;
  out << "n_tokens,labels,forward_ms\n";
  for (int n : args.seq_lens) {
    for (int l : args.label_counts) {
      ModelConfig cfg;
      cfg.d_model = args.d_model;
      cfg.n_heads = args.n_heads;
      cfg.vocab_size = std::max(1000, n + 1);
      cfg.label_count = l;
      cfg.max_seq_len = std::max(500, n);
      cfg.dropout = 0.0;
      ModelParams<float> params = init_params<float>(cfg, args.seed);
      RelationGraph graph(l, 0.05);
      for (int i = 0; i + 1 < l; i += 2) graph.add_edge(i, i + 1, i % 4 == 0 ? Relation::pulling : Relation::pushing);
      GraphTensors<float> gt = make_graph_tensors<float>(graph, false);
      Rng rng(args.seed);
      std::vector<int> tokens(static_cast<std::size_t>(n));
      for (auto& t : tokens) t = rng.uniform_int(cfg.vocab_size);
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 1);
      Rng idle(0);
      // warm-up
      RelationOutput<float> rel = relation_forward(params.relation, gt, cfg);
      forward_instance(tokens, mask, params, rel, cfg, false, idle);
      const auto start = clock::now();
      for (int r = 0; r < args.reps; ++r) {
        RelationOutput<float> rel_r = relation_forward(params.relation, gt, cfg);
        forward_instance(tokens, mask, params, rel_r, cfg, false, idle);
      }
      const double ms =
          std::chrono::duration<double, std::milli>(clock::now() - start).count() / args.reps;
      out << n << "," << l << "," << detail::fmt_g(ms, 5) << "\n";
    }
  }
}

// Maps the error taxonomy onto process exit codes; prints one line per error.
template <typename Fn>
int run_command(Fn&& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return 0;
  } catch (const parse_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const config_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const degenerate_data_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const mismatch_error& e) {
    err << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mrmp
