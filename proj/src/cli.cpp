// SPDX-License-Identifier: Apache-2.0
#include "csarec/cli.hpp"

#include "csarec/checkpoint.hpp"
#include "csarec/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace csarec {

namespace fs = std::filesystem;

namespace {

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("missing file: " + path);
}

TupleCache load_tuples(const std::string& dir, const std::string& split) {
  const std::string path = path_in(dir, tuples_file(split));
  require_file(path);
  std::ifstream in(path);
  return read_tuple_cache(in);
}

void check_window(const TupleCache& cache, const RunConfig& cfg, const std::string& what) {
  if (cache.length != cfg.encoder.max_len)
    throw std::runtime_error(what + " was prepared with window length " + std::to_string(cache.length) +
                             " but encoder.max_len is " + std::to_string(cfg.encoder.max_len));
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  atomic_write_text(path_in(out_dir, kConfigEcho), render_run_config(cfg));
}

void write_json(const std::string& path, const nlohmann::json& j) { atomic_write_text(path, j.dump(2) + "\n"); }

nlohmann::json losses_json(const LossBreakdown& l) {
  return {{"supervised", l.supervised}, {"q_td", l.q_td},   {"augmented", l.augmented},
          {"contrastive", l.contrastive}, {"total", l.total}};
}

}  // namespace

std::string tuples_file(const std::string& split) { return split + ".tuples"; }

PrepareSummary cmd_prepare_data(const RunConfig& cfg, const std::string& out_dir) {
  validate(cfg);
  ParsedSessions parsed;
  if (cfg.data.input.empty() || cfg.data.input == "synthetic") {
    parsed.sessions = generate_cluster_corpus(cfg.corpus_spec());
    parsed.catalog.num_items = cfg.synthetic.items;
  } else {
    require_file(cfg.data.input);
    const FeedbackLabels labels =
        cfg.data.labels == "retail_rocket" ? FeedbackLabels::retail_rocket() : FeedbackLabels{};
    parsed = parse_sessions_file(cfg.data.input, labels);
  }
  if (parsed.sessions.empty()) throw std::runtime_error("no sessions of length >= 3 in the input");

  const SessionSplit split = split_sessions(parsed.sessions, cfg.data.split, cfg.data.split_seed);
  fs::create_directories(out_dir);
  atomic_write(path_in(out_dir, kSessionsFile), [&](std::ostream& o) { write_sessions(o, parsed.sessions); });
  if (!parsed.item_tokens.empty())
    atomic_write(path_in(out_dir, kItemsFile), [&](std::ostream& o) {
      o << "item_index\titem_token\n";
      for (std::size_t i = 0; i < parsed.item_tokens.size(); ++i) o << i << '\t' << parsed.item_tokens[i] << '\n';
    });
  atomic_write(path_in(out_dir, kManifestFile),
               [&](std::ostream& o) { write_split_manifest(o, split, cfg.data.split_seed); });

  PrepareSummary summary;
  summary.catalog = parsed.catalog;
  summary.sessions = parsed.sessions.size();
  summary.dropped_sessions = parsed.dropped_sessions;
  const int len = cfg.encoder.max_len;
  auto write_split = [&](const std::string& name, const std::vector<Session>& part) {
    const auto tuples = build_replay_tuples(part, len, cfg.data.rewards, parsed.catalog);
    atomic_write(path_in(out_dir, tuples_file(name)),
                 [&](std::ostream& o) { write_tuple_cache(o, tuples, parsed.catalog, len); });
    return tuples.size();
  };
  summary.train_tuples = write_split("train", split.train);
  summary.validation_tuples = write_split("validation", split.validation);
  summary.test_tuples = write_split("test", split.test);
  echo_config(cfg, out_dir);
  return summary;
}

TrainResult cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& resume) {
  validate(cfg);
  const TupleCache train_set = load_tuples(cfg.data.prepared, "train");
  const TupleCache validation_set = load_tuples(cfg.data.prepared, "validation");
  check_window(train_set, cfg, "training data");
  if (!(validation_set.catalog == train_set.catalog))
    throw std::runtime_error("training and validation caches disagree on the catalogue");

  std::optional<TrainState> state;
  if (!resume.empty()) {
    require_file(resume);
    Checkpoint ck = load_checkpoint(resume);
    if (!ck.has_train_state) throw std::runtime_error(resume + " holds a model without training state");
    if (!(ck.state.model.catalog() == train_set.catalog))
      throw std::runtime_error(resume + " was trained on a different catalogue");
    state.emplace(std::move(ck.state));
  } else {
    state.emplace(make_train_state(train_set.catalog, cfg.encoder, cfg.head_activation, cfg.train));
  }
  echo_config(cfg, out_dir);
  TrainOutputs outputs;
  outputs.directory = out_dir;
  TrainResult result = train(*state, train_set.tuples, validation_set.tuples, cfg.train, outputs);

  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : result.epochs) {
    nlohmann::json j{{"epoch", e.epoch}, {"step", e.step}, {"losses", losses_json(e.mean_losses)}};
    j["validation"] = e.validation ? e.validation->to_json() : nlohmann::json(nullptr);
    epochs.push_back(j);
  }
  nlohmann::json summary{{"preset", cfg.preset},
                         {"step", state->step},
                         {"epoch", state->epoch},
                         {"epochs", epochs},
                         {"best_checkpoint", fs::path(result.best_checkpoint).filename().string()},
                         {"last_checkpoint", fs::path(result.last_checkpoint).filename().string()}};
  summary["best_validation"] = result.best_validation ? result.best_validation->to_json() : nlohmann::json(nullptr);
  write_json(path_in(out_dir, kTrainSummary), summary);
  return result;
}

std::string resolve_checkpoint(const std::string& checkpoint) {
  if (!fs::is_directory(checkpoint)) {
    require_file(checkpoint);
    return checkpoint;
  }
  const std::string summary_path = path_in(checkpoint, kTrainSummary);
  if (fs::is_regular_file(summary_path)) {
    const auto j = nlohmann::json::parse(read_text(summary_path));
    const std::string best = j.value("best_checkpoint", "");
    if (!best.empty() && fs::is_regular_file(path_in(checkpoint, best))) return path_in(checkpoint, best);
  }
  const std::string last = path_in(checkpoint, "last.ckpt");
  require_file(last);
  return last;
}

MetricReport cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& out_dir) {
  validate(cfg);
  const std::string path = resolve_checkpoint(checkpoint);
  const RecommenderModel model = load_model(path);
  const TupleCache data = load_tuples(cfg.data.prepared, cfg.eval.split);
  if (!(data.catalog == model.catalog()))
    throw std::runtime_error("checkpoint catalogue (" + std::to_string(model.catalog().num_items) +
                             " items) does not match the prepared data (" + std::to_string(data.catalog.num_items) +
                             " items)");
  if (data.length != model.encoder().config().max_len)
    throw std::runtime_error("prepared window length differs from the checkpoint's encoder max_len");
  const MetricReport report = evaluate(model, data.tuples, cfg.eval_options());
  echo_config(cfg, out_dir);
  nlohmann::json doc = report.to_json();
  doc["checkpoint"] = fs::path(path).filename().string();
  doc["split"] = cfg.eval.split;
  doc["filter"] = cfg.eval.filter;
  doc["score_source"] = to_string(cfg.eval.score_source);
  write_json(path_in(out_dir, "metrics-" + cfg.eval.split + ".json"), doc);
  return report;
}

std::vector<CurveReport> cmd_simulate(const RunConfig& cfg, const std::string& checkpoint,
                                      const std::string& out_dir) {
  validate(cfg);
  const std::string path = resolve_checkpoint(checkpoint);
  const RecommenderModel model = load_model(path);
  const SimulatorConfig& s = cfg.simulator;
  DenseRewardMatrix matrix;
  if (s.matrix.empty()) {
    matrix = low_rank_matrix(s.users, model.catalog().num_items, s.rank, s.seed);
  } else {
    require_file(s.matrix);
    matrix = DenseRewardMatrix::load(s.matrix);
  }
  const Environment env(matrix, cfg.environment_options());
  std::vector<CurveReport> curves;
  curves.push_back(evaluate_policy(model, env, s.rounds, s.repetitions, s.gamma, s.seed, cfg.eval.score_source));
  RandomPolicy random;
  curves.push_back(evaluate_policy(random, env, s.rounds, s.repetitions, s.gamma, s.seed));
  OraclePolicy oracle;
  curves.push_back(evaluate_policy(oracle, env, s.rounds, s.repetitions, s.gamma, s.seed));

  echo_config(cfg, out_dir);
  if (s.matrix.empty())
    atomic_write(path_in(out_dir, "matrix.txt"), [&](std::ostream& o) { matrix.write(o); });
  nlohmann::json doc{{"checkpoint", fs::path(path).filename().string()},
                     {"rounds", s.rounds},
                     {"gamma", s.gamma},
                     {"repetitions", s.repetitions},
                     {"policies", nlohmann::json::array()}};
  for (const CurveReport& c : curves) doc["policies"].push_back(c.to_json());
  write_json(path_in(out_dir, kSimulationFile), doc);
  return curves;
}

// ---- report ------------------------------------------------------------------

namespace {

struct RunLog {
  std::string label;
  std::vector<double> steps;
  std::vector<double> totals;
  // epoch -> (sum of totals, count)
  std::map<int, std::pair<double, int>> epoch_totals;
};

std::string label_for(const fs::path& file) {
  const fs::path parent = file.parent_path();
  return parent.empty() ? file.filename().string() : parent.filename().string();
}

RunLog read_log(const fs::path& file) {
  RunLog log;
  log.label = label_for(file);
  std::ifstream in(file);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(file.string() + ": line " + std::to_string(row) + " is not JSON");
    }
    const double total = j.at("total").get<double>();
    log.steps.push_back(j.at("step").get<double>());
    log.totals.push_back(total);
    auto& acc = log.epoch_totals[j.at("epoch").get<int>()];
    acc.first += total;
    acc.second += 1;
  }
  return log;
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const double w = 640, h = 400, left = 70, right = 170, top = 40, bottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(xv, "%g")
      << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv, "%.3g")
      << "</text>\n";
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">" << x_label
    << "</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
    << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* c = colors[k % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << fmt(px(s.x[i]), "%.2f") << ',' << fmt(py(s.y[i]), "%.2f") << ' ';
    o << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << w - right + 10 << "\" x2=\"" << w - right + 30 << "\" y1=\"" << ly - 4 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << w - right + 36 << "\" y=\"" << ly << "\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
  if (inputs.empty()) throw std::invalid_argument("report: no inputs given");
  std::vector<fs::path> logs, metrics, sims;
  auto classify = [&](const fs::path& p) {
    const std::string name = p.filename().string();
    if (name == "train_log.ndjson")
      logs.push_back(p);
    else if (name.rfind("metrics", 0) == 0 && p.extension() == ".json")
      metrics.push_back(p);
    else if (name == kSimulationFile)
      sims.push_back(p);
  };
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file()) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      for (const auto& p : found) classify(p);
    } else {
      require_file(in);
      classify(in);
    }
  }
  if (logs.empty() && metrics.empty() && sims.empty())
    throw std::runtime_error("report: no train_log.ndjson, metrics*.json or simulation.json among the inputs");

  std::ostringstream text;
  fs::create_directories(out_dir);
  if (!metrics.empty()) {
    text << "Offline metrics\n";
    std::vector<int> ks;
    std::vector<std::pair<std::string, nlohmann::json>> docs;
    for (const auto& p : metrics) {
      const auto j = nlohmann::json::parse(read_text(p.string()));
      const MetricReport r = MetricReport::from_json(j);
      for (int k : r.ks)
        if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
      docs.emplace_back(label_for(p) + "/" + p.filename().string(), j);
    }
    std::sort(ks.begin(), ks.end());
    text << pad("run", 40) << pad("n", 8);
    for (int k : ks) text << pad("hr@" + std::to_string(k), 10) << pad("ndcg@" + std::to_string(k), 10);
    text << '\n';
    for (const auto& [label, j] : docs) {
      text << pad(label, 40) << pad(std::to_string(j.at("n").get<std::size_t>()), 8);
      for (int k : ks) {
        const std::string hk = "hr@" + std::to_string(k), nk = "ndcg@" + std::to_string(k);
        text << pad(j.contains(hk) ? fmt(j[hk].get<double>()) : "-", 10)
             << pad(j.contains(nk) ? fmt(j[nk].get<double>()) : "-", 10);
      }
      text << '\n';
    }
    text << '\n';
  }
  if (!logs.empty()) {
    text << "Training loss (mean total per epoch)\n";
    std::vector<Series> series;
    for (const auto& p : logs) {
      const RunLog log = read_log(p);
      text << pad(log.label, 40);
      for (const auto& [epoch, acc] : log.epoch_totals)
        text << "e" << epoch << '=' << fmt(acc.first / std::max(1, acc.second)) << ' ';
      text << '\n';
      series.push_back({log.label, log.steps, log.totals});
    }
    text << '\n';
    atomic_write_text(path_in(out_dir, "loss.svg"), svg_line_chart("Training loss", "step", "total loss", series));
  }
  if (!sims.empty()) {
    text << "Simulated cumulative discounted reward (final round)\n";
    std::vector<Series> series;
    for (const auto& p : sims) {
      const auto j = nlohmann::json::parse(read_text(p.string()));
      const std::string run = label_for(p);
      for (const auto& c : j.at("policies")) {
        const auto curve = c.at("curve").get<std::vector<double>>();
        const std::string label = run + ":" + c.at("policy").get<std::string>();
        text << pad(label, 40) << (curve.empty() ? std::string("-") : fmt(curve.back())) << '\n';
        Series s{label, {}, curve};
        for (std::size_t i = 0; i < curve.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
        series.push_back(std::move(s));
      }
    }
    text << '\n';
    atomic_write_text(path_in(out_dir, "simulation.svg"),
                      svg_line_chart("Simulated return", "round", "cumulative discounted reward", series));
  }
  const std::string summary = text.str();
  atomic_write_text(path_in(out_dir, "summary.txt"), summary);
  return summary;
}

}  // namespace csarec
