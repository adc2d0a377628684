// SPDX-License-Identifier: Apache-2.0
#include "csarec/checkpoint.hpp"
#include "csarec/cli.hpp"
#include "csarec/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace csarec;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "csarec_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_config(const fs::path& root) {
  RunConfig cfg;
  cfg.synthetic.sessions = 300;
  cfg.synthetic.items = 12;
  cfg.encoder.embedding_dim = 8;
  cfg.encoder.max_len = 5;
  cfg.train.batch_size = 64;
  cfg.train.max_epochs = 2;
  cfg.eval.filter = "all";
  cfg.simulator.users = 10;
  cfg.simulator.rounds = 4;
  cfg.simulator.repetitions = 2;
  cfg.data.prepared = (root / "prepared").string();
  apply_preset(cfg, "csa-n");
  return cfg;
}

// Relative path -> contents; wall-clock fields are dropped from the step log.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string content = read_text(e.path().string());
    if (e.path().filename() == "train_log.ndjson") {
      std::istringstream in(content);
      std::string line, stripped;
      while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        j.erase("wall_time");
        stripped += j.dump() + "\n";
      }
      content = stripped;
    }
    files[fs::relative(e.path(), dir).string()] = content;
  }
  return files;
}

struct PipelineRun {
  MetricReport metrics;
  std::vector<CurveReport> curves;
  std::string summary;
};

PipelineRun run_pipeline(const RunConfig& cfg, const fs::path& root) {
  cmd_prepare_data(cfg, cfg.data.prepared);
  const std::string run = (root / "run").string();
  cmd_train(cfg, run);
  PipelineRun out;
  out.metrics = cmd_evaluate(cfg, run, (root / "eval").string());
  out.curves = cmd_simulate(cfg, run, (root / "sim").string());
  out.summary = cmd_report({root.string()}, (root / "report").string());
  return out;
}

}  // namespace

TEST(Cli, PipelineWritesEveryDocument) {
  const fs::path root = fresh_dir("pipeline");
  const RunConfig cfg = small_config(root);
  const PipelineRun r = run_pipeline(cfg, root);
  for (const char* f : {"prepared/train.tuples", "prepared/validation.tuples", "prepared/test.tuples",
                        "prepared/split.manifest", "prepared/sessions.tsv", "prepared/config.ini",
                        "run/train_summary.json", "run/train_log.ndjson", "run/config.ini", "eval/metrics-test.json",
                        "eval/config.ini", "sim/simulation.json", "sim/matrix.txt", "report/summary.txt",
                        "report/loss.svg", "report/simulation.svg"})
    EXPECT_TRUE(fs::is_regular_file(root / f)) << f;
  EXPECT_GT(r.metrics.num_eval_events, 0u);
  ASSERT_EQ(r.curves.size(), 3u);
  EXPECT_EQ(r.curves[1].policy, "random");
  EXPECT_EQ(r.curves[2].policy, "oracle");
  for (std::size_t t = 0; t < r.curves[2].curve.size(); ++t) EXPECT_GE(r.curves[2].curve[t], r.curves[1].curve[t]);
  EXPECT_NE(r.summary.find("Offline metrics"), std::string::npos);
  EXPECT_NE(r.summary.find("Training loss"), std::string::npos);
  EXPECT_NE(r.summary.find("Simulated"), std::string::npos);

  // The echoed config parses back to the effective one.
  const RunConfig echoed = load_run_config((root / "run" / kConfigEcho).string());
  EXPECT_EQ(render_run_config(echoed), render_run_config(cfg));
  const auto summary = nlohmann::json::parse(read_text((root / "run" / kTrainSummary).string()));
  EXPECT_EQ(summary["epoch"], 2);
  EXPECT_EQ(summary["preset"], "csa-n");
}

TEST(Cli, RerunReproducesIdenticalDocuments) {
  const fs::path a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  RunConfig ca = small_config(a), cb = small_config(b);
  ca.train.max_epochs = cb.train.max_epochs = 1;
  run_pipeline(ca, a);
  run_pipeline(cb, b);
  auto sa = snapshot(a), sb = snapshot(b);
  // The echoed prepared path names the run root.
  for (auto* s : {&sa, &sb})
    for (const char* f : {"prepared/config.ini", "run/config.ini", "eval/config.ini", "sim/config.ini"}) s->erase(f);
  ASSERT_EQ(sa.size(), sb.size());
  for (const auto& [name, content] : sa) {
    ASSERT_TRUE(sb.count(name)) << name;
    EXPECT_TRUE(content == sb[name]) << name;
  }
}

TEST(Cli, CommandsDoNotMutateInputs) {
  const fs::path root = fresh_dir("inputs");
  RunConfig cfg = small_config(root);
  cfg.train.max_epochs = 1;
  cmd_prepare_data(cfg, cfg.data.prepared);
  const auto prepared = snapshot(root / "prepared");
  const std::string run = (root / "run").string();
  cmd_train(cfg, run);
  const auto trained = snapshot(root / "run");
  cmd_evaluate(cfg, run, (root / "eval").string());
  cmd_simulate(cfg, run, (root / "sim").string());
  cmd_report({run, (root / "eval").string()}, (root / "report").string());
  EXPECT_EQ(snapshot(root / "prepared"), prepared);
  EXPECT_EQ(snapshot(root / "run"), trained);
}

TEST(Cli, ZeroEpochsWritesACheckpoint) {
  const fs::path root = fresh_dir("zero");
  RunConfig cfg = small_config(root);
  cfg.train.max_epochs = 0;
  cmd_prepare_data(cfg, cfg.data.prepared);
  const std::string run = (root / "run").string();
  const TrainResult r = cmd_train(cfg, run);
  EXPECT_TRUE(r.epochs.empty());
  const std::string ckpt = resolve_checkpoint(run);
  EXPECT_TRUE(fs::is_regular_file(ckpt));
  EXPECT_TRUE(load_checkpoint(ckpt).has_train_state);
}

TEST(Cli, EvaluateOracleHeadGivesPerfectMetrics) {
  const fs::path root = fresh_dir("oracle");
  const CatalogInfo catalog{6};
  const int length = 3;
  // Every logged target is item 2, so a bias on item 2 ranks it first.
  std::vector<Session> sessions;
  for (int s = 0; s < 5; ++s) {
    Session session;
    for (int item : {s % 2, 3 + s % 3, 2}) session.interactions.push_back({item, Feedback::purchase, 0});
    sessions.push_back(session);
  }
  const auto tuples = build_replay_tuples(sessions, length, RewardMap{}, catalog);
  std::vector<ReplayTuple> last;
  for (const ReplayTuple& t : tuples)
    if (t.action == 2) last.push_back(t);
  ASSERT_EQ(last.size(), 5u);
  fs::create_directories(root / "prepared");
  atomic_write((root / "prepared" / tuples_file("test")).string(),
               [&](std::ostream& o) { write_tuple_cache(o, last, catalog, length); });

  EncoderConfig enc;
  enc.embedding_dim = 4;
  enc.max_len = length;
  RecommenderModel m(catalog, enc, Activation::identity, 0);
  m.supervised.weight.value.setZero();
  m.supervised.bias.value.setZero();
  m.supervised.bias.value(2) = 1.0;
  const std::string ckpt = (root / "oracle.ckpt").string();
  save_model(ckpt, m);

  RunConfig cfg;
  cfg.data.prepared = (root / "prepared").string();
  cfg.encoder = enc;
  const MetricReport r = cmd_evaluate(cfg, ckpt, (root / "eval").string());
  EXPECT_EQ(r.num_eval_events, 5u);
  const auto doc = nlohmann::json::parse(read_text((root / "eval" / "metrics-test.json").string()));
  for (int k : cfg.eval.ks) {
    EXPECT_EQ(doc["hr@" + std::to_string(k)], 1.0);
    EXPECT_EQ(doc["ndcg@" + std::to_string(k)], 1.0);
  }
  EXPECT_EQ(doc["n"], 5);
}

TEST(Cli, MissingInputsAreReported) {
  const fs::path root = fresh_dir("missing");
  RunConfig cfg;
  cfg.data.prepared = (root / "nothing").string();
  EXPECT_THROW(cmd_train(cfg, (root / "run").string()), std::runtime_error);
  EXPECT_THROW(cmd_evaluate(cfg, (root / "no.ckpt").string(), (root / "eval").string()), std::runtime_error);
  EXPECT_THROW(cmd_report({}, (root / "r").string()), std::invalid_argument);
  EXPECT_THROW(cmd_report({root.string()}, (root / "r").string()), std::runtime_error);
  cfg.data.input = (root / "absent.tsv").string();
  EXPECT_THROW(cmd_prepare_data(cfg, (root / "p").string()), std::runtime_error);
  EXPECT_FALSE(fs::exists(root / "run"));
}

TEST(Cli, MismatchedWindowIsRejected) {
  const fs::path root = fresh_dir("window");
  RunConfig cfg = small_config(root);
  cmd_prepare_data(cfg, cfg.data.prepared);
  cfg.encoder.max_len = 7;
  EXPECT_THROW(cmd_train(cfg, (root / "run").string()), std::runtime_error);
}

TEST(SvgLineChart, EmitsOnePolylinePerSeries) {
  const std::string svg = svg_line_chart("t", "x", "y", {{"a", {0, 1}, {1, 2}}, {"b", {0, 1}, {2, 1}}});
  std::size_t count = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++count;
  EXPECT_EQ(count, 2u);
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
}
