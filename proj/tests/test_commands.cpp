#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mrmp/commands.hpp"
#include "mrmp/rng.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace mrmp;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

int count_lines(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  int n = 0;
  std::string line;
  while (std::getline(is, line)) ++n;
  return n;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig small_run(const testing::TempDir& dir) {
  RunConfig run;
  run.d_model = 16;
  run.n_heads = 2;
  run.n_rel_layers = 1;
  run.dropout = 0.1;
  run.epochs = 2;
  run.patience = 0;
  run.seed = 3;
  run.out_dir = dir.str("out");
  return run;
}

}  // namespace

TEST_CASE("build-graph on a copy-label file reports one pulling edge") {
  testing::TempDir dir("bg_copy");
  std::ostringstream data;
  data << "100 4 2\n";
  for (int i = 0; i < 100; ++i) {
    if (i < 40) data << "0,1 0:1 2:1\n";
    else data << " 1:1 3:1\n";
  }
  write_file(dir.str("train.txt"), data.str());

  RunConfig run;
  run.train_path = dir.str("train.txt");
  run.out_dir = dir.str("graph.txt");
  std::ostringstream out;
  GraphSummary s = cmd_build_graph(run, out);
  CHECK(s.pulling_edges == 1);
  CHECK(s.pushing_edges == 0);
  CHECK(s.pairs_tested == 1);
  RelationGraph g = read_edge_list(dir.str("graph.txt"));
  CHECK(g.edge_plus(0, 1));
}

TEST_CASE("build-graph on an exclusive-label file reports one pushing edge") {
  testing::TempDir dir("bg_excl");
  std::ostringstream data;
  data << "100 4 2\n";
  for (int i = 0; i < 100; ++i) {
    if (i < 40) data << "0 0:1\n";
    else if (i < 80) data << "1 1:1\n";
    else data << " 2:1\n";
  }
  write_file(dir.str("train.txt"), data.str());

  RunConfig run;
  run.train_path = dir.str("train.txt");
  run.out_dir = dir.str("graph.txt");
  std::ostringstream out;
  GraphSummary s = cmd_build_graph(run, out);
  CHECK(s.pulling_edges == 0);
  CHECK(s.pushing_edges == 1);
}

TEST_CASE("edge counts are monotone in alpha") {
  testing::TempDir dir("bg_mono");
  Dataset ds = testing::planted_corpus(150, 1, 42).train;
  serialize_sparse_dataset(ds, dir.str("train.txt"));
  RunConfig run;
  run.train_path = dir.str("train.txt");
  std::int64_t counts[3];
  int k = 0;
  for (double alpha : {0.001, 0.05, 0.6}) {
    run.alpha = alpha;
    run.out_dir = dir.str("g" + std::to_string(k) + ".txt");
    std::ostringstream out;
    GraphSummary s = cmd_build_graph(run, out);
    counts[k++] = s.pulling_edges + s.pushing_edges;
  }
  CHECK(counts[0] <= counts[1]);
  CHECK(counts[1] <= counts[2]);
}

TEST_CASE("build-graph exit codes: parse failure 2, degenerate dataset 3") {
  testing::TempDir dir("bg_err");
  write_file(dir.str("bad.txt"), "not a header\n");
  RunConfig bad;
  bad.train_path = dir.str("bad.txt");
  bad.out_dir = dir.str("g.txt");
  std::ostringstream sink;
  CHECK(run_command([&] { cmd_build_graph(bad, sink); }, sink) == 2);

  write_file(dir.str("constant.txt"), "3 2 2\n0,1 0:1\n0,1 1:1\n0,1 0:1\n");
  RunConfig degen;
  degen.train_path = dir.str("constant.txt");
  degen.out_dir = dir.str("g.txt");
  CHECK(run_command([&] { cmd_build_graph(degen, sink); }, sink) == 3);

  RunConfig missing;
  missing.train_path = dir.str("nowhere.txt");
  missing.out_dir = dir.str("g.txt");
  CHECK(run_command([&] { cmd_build_graph(missing, sink); }, sink) == 2);
}

TEST_CASE("train command: artifacts, determinism of the log, ablation flag") {
  testing::TempDir dir("train_cmd");
  Dataset train = testing::rule_dataset(50, 17);
  Dataset valid = testing::rule_dataset(20, 18);
  serialize_sparse_dataset(train, dir.str("train.txt"));
  serialize_sparse_dataset(valid, dir.str("valid.txt"));

  RunConfig run = small_run(dir);
  run.train_path = dir.str("train.txt");
  run.valid_path = dir.str("valid.txt");
  std::ostringstream out;
  TrainOutputs outputs = cmd_train(run, out);

  CHECK(count_lines(outputs.log_path) == 3);  // header + 2 epochs
  const std::string log = read_file(outputs.log_path);
  CHECK(log.rfind("epoch,l_bce,l_rel,total,lr,val_acc,val_ebf1,val_mif1,val_maf1\n", 0) == 0);
  CHECK(std::filesystem::exists(dir.str("out") + "/config.txt"));
  CHECK(std::filesystem::exists(dir.str("out") + "/graph.txt"));
  Checkpoint ckpt = load_checkpoint(outputs.checkpoint_dir);
  CHECK(ckpt.config.label_count == 10);

  // identical seeds give byte-identical logs
  RunConfig again = run;
  again.out_dir = dir.str("out2");
  std::ostringstream out2;
  TrainOutputs second = cmd_train(again, out2);
  CHECK(read_file(outputs.log_path) == read_file(second.log_path));

  // --no-mrmp switches the relation module off in the stored config
  RunConfig ablated = run;
  ablated.no_mrmp = true;
  ablated.out_dir = dir.str("out3");
  std::ostringstream out3;
  TrainOutputs third = cmd_train(ablated, out3);
  Checkpoint ab = load_checkpoint(third.checkpoint_dir);
  CHECK_FALSE(ab.config.mrmp_enabled);
  CHECK(read_file(dir.str("out3") + "/config.txt").find("lambda_rel=0\n") != std::string::npos);
}

TEST_CASE("evaluate command: report shape and threshold consistency") {
  testing::TempDir dir("eval_cmd");
  Dataset train = testing::rule_dataset(60, 4);
  Dataset valid = testing::rule_dataset(25, 5);
  Dataset test = testing::rule_dataset(25, 6);
  serialize_sparse_dataset(train, dir.str("train.txt"));
  serialize_sparse_dataset(valid, dir.str("valid.txt"));
  serialize_sparse_dataset(test, dir.str("test.txt"));

  RunConfig run = small_run(dir);
  run.train_path = dir.str("train.txt");
  run.valid_path = dir.str("valid.txt");
  std::ostringstream out;
  TrainOutputs trained = cmd_train(run, out);

  RunConfig eval_run = small_run(dir);
  eval_run.valid_path = dir.str("valid.txt");
  eval_run.test_path = dir.str("test.txt");
  eval_run.out_dir = dir.str("report");
  EvaluateArgs args{trained.checkpoint_dir, trained.graph_path};
  std::ostringstream eval_out;
  EvaluateReport report = cmd_evaluate(eval_run, args, eval_out);

  CHECK(count_lines(dir.str("report") + "/metrics.csv") == 5);  // header + 4 metrics
  CHECK(count_lines(dir.str("report") + "/auc.csv") == 11);     // header + 10 labels

  // thresholds echoed in the report equal tune_threshold outputs
  Checkpoint ckpt = load_checkpoint(trained.checkpoint_dir);
  RelationGraph graph = read_edge_list(trained.graph_path);
  GraphTensors<float> gt = make_graph_tensors<float>(graph, false);
  const std::vector<float> val_scores = predict_scores(ckpt.params, ckpt.config, gt, valid);
  for (Metric m : {Metric::acc, Metric::ebf1, Metric::mif1, Metric::maf1}) {
    const ThresholdChoice want = tune_threshold(label_matrix(valid), val_scores, valid.size(), 10, m);
    CHECK(report.thresholds.at(metric_name(m)) == doctest::Approx(want.threshold));
  }

  // label-count mismatch exits with code 5
  Dataset other = testing::planted_corpus(30, 1, 9).train;
  serialize_sparse_dataset(other, dir.str("other.txt"));
  RunConfig bad = eval_run;
  bad.test_path = dir.str("other.txt");
  std::ostringstream sink;
  CHECK(run_command([&] { cmd_evaluate(bad, args, sink); }, sink) == 5);
}

TEST_CASE("predict command writes one row per instance") {
  testing::TempDir dir("pred_cmd");
  Dataset train = testing::rule_dataset(40, 8);
  serialize_sparse_dataset(train, dir.str("train.txt"));
  RunConfig run = small_run(dir);
  run.train_path = dir.str("train.txt");
  std::ostringstream out;
  TrainOutputs trained = cmd_train(run, out);

  cmd_predict(run, trained.checkpoint_dir, dir.str("train.txt"), dir.str("scores.csv"));
  CHECK(count_lines(dir.str("scores.csv")) == 41);
  std::ifstream is(dir.str("scores.csv"));
  std::string header;
  std::getline(is, header);
  CHECK(header == "instance,label0,label1,label2,label3,label4,label5,label6,label7,label8,label9");
}

TEST_CASE("predict scores a relational checkpoint with its training graph") {
  testing::TempDir dir("pred_graph");
  Dataset train = testing::planted_corpus(120, 1, 3).train;
  serialize_sparse_dataset(train, dir.str("train.txt"));
  RunConfig run = small_run(dir);
  run.train_path = dir.str("train.txt");
  std::ostringstream out;
  TrainOutputs trained = cmd_train(run, out);

  Checkpoint ckpt = load_checkpoint(trained.checkpoint_dir);
  RelationGraph stored = read_edge_list(trained.graph_path);
  CHECK(ckpt.graph.a_plus == stored.a_plus);
  CHECK(ckpt.graph.a_minus == stored.a_minus);

  cmd_predict(run, trained.checkpoint_dir, dir.str("train.txt"), dir.str("scores.csv"));
  // recompute through the library path with the stored graph: must agree
  GraphTensors<float> gt = ckpt.graph_tensors();
  const std::vector<float> want = predict_scores(ckpt.params, ckpt.config, gt, train);
  std::ifstream is(dir.str("scores.csv"));
  std::string line;
  std::getline(is, line);  // header
  std::getline(is, line);
  std::stringstream first_row(line);
  std::string cell;
  std::getline(first_row, cell, ',');  // instance id
  std::getline(first_row, cell, ',');
  CHECK(std::stod(cell) == doctest::Approx(want[0]).epsilon(1e-4));
}

TEST_CASE("ablation report: identical checkpoints give zero deltas, fixed row count") {
  testing::TempDir dir("abl_cmd");
  Dataset train = testing::rule_dataset(40, 12);
  serialize_sparse_dataset(train, dir.str("train.txt"));
  RunConfig run = small_run(dir);
  run.train_path = dir.str("train.txt");
  std::ostringstream out;
  TrainOutputs trained = cmd_train(run, out);

  RunConfig abl_run = small_run(dir);
  abl_run.out_dir = dir.str("ablation");
  std::ostringstream abl_out;
  AblationReport report = cmd_ablation_report(abl_run, trained.checkpoint_dir, trained.checkpoint_dir,
                                              dir.str("train.txt"), trained.graph_path, 4, abl_out);
  CHECK(report.rows.size() == 8);  // 4 groups x 2 relations
  for (const AblationRow& row : report.rows) {
    if (row.has_mean) CHECK(row.mean_delta_auc == doctest::Approx(0.0));
  }
  for (double d : report.delta_auc) {
    if (!std::isnan(d)) CHECK(d == doctest::Approx(0.0));
  }
  CHECK(count_lines(dir.str("ablation") + "/ablation.csv") == 9);
}

TEST_CASE("stats command reproduces toy dataset statistics") {
  testing::TempDir dir("stats_cmd");
  write_file(dir.str("toy.txt"), "3 10 5\n0,1 2:1\n0,1,2 3:1\n2 4:1\n");
  RunConfig run;
  std::ostringstream out;
  DatasetStats s = cmd_stats(run, dir.str("toy.txt"), out);
  CHECK(s.instances == 3);
  CHECK(s.labels == 5);
  CHECK(s.features == 10);
  CHECK(s.cardinality == doctest::Approx(2.0));
  CHECK(out.str().find("cardinality=2") != std::string::npos);
}

TEST_CASE("split command writes three files with requested proportions") {
  testing::TempDir dir("split_cmd");
  Dataset ds = testing::rule_dataset(100, 33);
  serialize_sparse_dataset(ds, dir.str("all.txt"));
  RunConfig run;
  run.out_dir = dir.str("splits");
  std::ostringstream out;
  cmd_split(run, dir.str("all.txt"), 0.7, 0.1, out);
  Dataset train = parse_sparse_dataset(dir.str("splits") + "/train.txt");
  Dataset valid = parse_sparse_dataset(dir.str("splits") + "/valid.txt");
  Dataset test = parse_sparse_dataset(dir.str("splits") + "/test.txt");
  CHECK(train.size() == 70);
  CHECK(valid.size() == 10);
  CHECK(test.size() == 20);
  CHECK(train.label_count == 10);
}

TEST_CASE("bench command emits one row per grid point") {
  BenchArgs args;
  args.seq_lens = {4, 8};
  args.label_counts = {3};
  args.d_model = 8;
  args.n_heads = 2;
  args.reps = 1;
  std::ostringstream out;
  cmd_bench(args, out);
  CHECK(out.str().rfind("n_tokens,labels,forward_ms\n", 0) == 0);
  int rows = 0;
  for (char c : out.str()) rows += c == '\n' ? 1 : 0;
  CHECK(rows == 3);  // header + 2 grid points
}

TEST_CASE("threshold grid specifications") {
  const std::vector<double> range = parse_threshold_grid("0.1:0.2:0.7");
  REQUIRE(range.size() == 4);
  CHECK(range[0] == doctest::Approx(0.1));
  CHECK(range[3] == doctest::Approx(0.7));
  const std::vector<double> list = parse_threshold_grid("0.25,0.5,0.75");
  REQUIRE(list.size() == 3);
  CHECK(list[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(parse_threshold_grid("0:0.1:0.9"), config_error);
  CHECK_THROWS_AS(parse_threshold_grid("junk"), config_error);
  CHECK_THROWS_AS(parse_threshold_grid("0.9:0.1:0.2"), config_error);
}

TEST_CASE("sequential pipeline trains end to end") {
  testing::TempDir dir("seq_train");
  write_file(dir.str("vocab.txt"), "alpha\nbeta\ngamma\ndelta\n");
  std::ostringstream data;
  Rng rng(6);
  const char* words[] = {"alpha", "beta", "gamma", "delta"};
  for (int i = 0; i < 30; ++i) {
    const int lab = rng.uniform_int(3);
    data << lab << "\t" << words[lab] << " " << words[rng.uniform_int(4)] << "\n";
  }
  write_file(dir.str("train.txt"), data.str());

  RunConfig run = small_run(dir);
  run.format = "sequence";
  run.vocab_path = dir.str("vocab.txt");
  run.label_count = 3;
  run.train_path = dir.str("train.txt");
  std::ostringstream out;
  TrainOutputs trained = cmd_train(run, out);
  Checkpoint ckpt = load_checkpoint(trained.checkpoint_dir);
  CHECK(ckpt.config.positional_encoding);  // sequential input switches it on
  CHECK(ckpt.config.label_count == 3);
  CHECK(ckpt.config.vocab_size == 6);  // 4 words + PAD + UNK

  cmd_predict(run, trained.checkpoint_dir, dir.str("train.txt"), dir.str("scores.csv"));
  CHECK(count_lines(dir.str("scores.csv")) == 31);
}

TEST_CASE("flat config files load, with strict keys") {
  testing::TempDir dir("cfg");
  write_file(dir.str("run.cfg"),
             "# comment\n"
             "d-model=24\n"
             "lr=0.001\n"
             "no-mrmp=true\n"
             "lambda-rel=0.25\n"
             "select-metric=maF1\n");
  RunConfig run;
  load_config_file(dir.str("run.cfg"), run);
  CHECK(run.d_model == 24);
  CHECK(run.lr == doctest::Approx(0.001));
  CHECK(run.no_mrmp);
  CHECK(run.lambda_rel == doctest::Approx(0.25));
  CHECK(run.lambda_rel_given);
  CHECK(run.select_metric == "maF1");

  write_file(dir.str("bad.cfg"), "frobnicate=9\n");
  RunConfig other;
  CHECK_THROWS_AS(load_config_file(dir.str("bad.cfg"), other), config_error);
  write_file(dir.str("noeq.cfg"), "epochs 5\n");
  CHECK_THROWS_AS(load_config_file(dir.str("noeq.cfg"), other), config_error);
  CHECK_THROWS_AS(load_config_file(dir.str("missing.cfg"), other), config_error);
}

TEST_CASE("cli binary smoke checks when MRMP_CLI is set") {
  const char* cli = std::getenv("MRMP_CLI");
  if (cli == nullptr) return;  // library-level coverage above
  testing::TempDir dir("cli_smoke");
  Dataset ds = testing::rule_dataset(30, 2);
  serialize_sparse_dataset(ds, dir.str("data.txt"));

  const std::string base = std::string(cli);
  CHECK(std::system((base + " --help > /dev/null 2>&1").c_str()) == 0);
  CHECK(std::system((base + " stats --data " + dir.str("data.txt") + " > /dev/null 2>&1").c_str()) == 0);
  CHECK(std::system((base + " build-graph --data " + dir.str("data.txt") + " --out " +
                     dir.str("g.txt") + " > /dev/null 2>&1").c_str()) == 0);
  // unknown flag: exit 2
  const int bad = std::system((base + " stats --data x --bogus > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(bad) == 2);
  // missing file: exit 2
  const int missing = std::system((base + " stats --data " + dir.str("none.txt") + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(missing) == 2);
}
