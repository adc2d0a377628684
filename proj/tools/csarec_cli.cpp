// SPDX-License-Identifier: Apache-2.0
// Command-line front end: prepare-data, train, evaluate, simulate, report.
#include "csarec/cli.hpp"
#include "csarec/config.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  std::string preset;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "sectioned key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "seed for data generation, splitting, training, evaluation and simulation");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_flag("--deterministic", f.deterministic, "single-threaded, bitwise reproducible run");
  cmd->add_option("--preset", f.preset, "normal, sqn, csa-n, csa-u, csa-m or csa-d");
  cmd->add_option("--set", f.overrides, "override one field, e.g. --set train.max_epochs=3")->take_all();
}

// File values first, then the preset, then explicit flags.
csarec::RunConfig effective_config(const CommonFlags& f) {
  csarec::RunConfig cfg;
  if (!f.config.empty()) cfg = csarec::load_run_config(f.config);
  if (!f.preset.empty()) csarec::apply_preset(cfg, f.preset);
  std::vector<std::string> problems;
  for (const std::string& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      problems.push_back("--set expects section.key=value, got '" + kv + "'");
      continue;
    }
    try {
      csarec::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const csarec::ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  if (f.seed) {
    cfg.synthetic.seed = *f.seed;
    cfg.data.split_seed = *f.seed;
    cfg.train.seed = *f.seed;
    cfg.eval.seed = *f.seed;
    cfg.simulator.seed = *f.seed;
  }
  if (f.deterministic) cfg.train.deterministic = true;
  try {
    csarec::validate(cfg);
  } catch (const csarec::ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  if (!problems.empty()) throw csarec::ConfigError(problems);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session recommender training with contrastive state augmentation"};
  app.require_subcommand(1);

  CommonFlags prep_f, train_f, eval_f, sim_f;
  auto* prep = app.add_subcommand("prepare-data", "parse or generate sessions, split, write tuple caches");
  add_common(prep, prep_f);
  std::string input;
  prep->add_option("--input", input, "interaction TSV (overrides data.input)");

  auto* tr = app.add_subcommand("train", "train from prepared data");
  add_common(tr, train_f);
  std::string resume;
  tr->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("evaluate", "rank a prepared split with a checkpoint");
  add_common(ev, eval_f);
  std::string eval_ckpt, split;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file or training directory")->required();
  ev->add_option("--split", split, "test or validation (overrides eval.split)");

  auto* sim = app.add_subcommand("simulate", "roll out a checkpoint in the reward-matrix simulator");
  add_common(sim, sim_f);
  std::string sim_ckpt, matrix;
  std::optional<int> rounds, reps;
  std::optional<double> gamma;
  sim->add_option("--checkpoint", sim_ckpt, "checkpoint file or training directory")->required();
  sim->add_option("--matrix", matrix, "dense reward matrix file (overrides simulator.matrix)");
  sim->add_option("--rounds", rounds, "recommendation rounds per user");
  sim->add_option("--gamma", gamma, "discount factor");
  sim->add_option("--reps", reps, "repetitions");

  auto* rep = app.add_subcommand("report", "summarize logs, metrics and simulation curves");
  std::vector<std::string> report_inputs;
  std::string report_out = "report";
  rep->add_option("inputs", report_inputs, "files or directories to scan")->required();
  rep->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prep) {
      if (!input.empty()) prep_f.overrides.push_back("data.input=" + input);
      const auto cfg = effective_config(prep_f);
      const std::string out = prep_f.out.empty() ? cfg.data.prepared : prep_f.out;
      std::cout << csarec::render_run_config(cfg);
      const auto s = csarec::cmd_prepare_data(cfg, out);
      std::cout << "prepared " << s.sessions << " sessions (" << s.dropped_sessions << " dropped), "
                << s.catalog.num_items << " items, tuples train/validation/test " << s.train_tuples << '/'
                << s.validation_tuples << '/' << s.test_tuples << " in " << out << '\n';
    } else if (*tr) {
      const auto cfg = effective_config(train_f);
      const std::string out = train_f.out.empty() ? cfg.output_dir : train_f.out;
      std::cout << csarec::render_run_config(cfg);
      const auto r = csarec::cmd_train(cfg, out, resume);
      for (const auto& e : r.epochs) {
        std::cout << "epoch " << e.epoch << " step " << e.step << " loss " << e.mean_losses.total;
        if (e.validation) std::cout << " val ndcg@10 " << e.validation->ndcg_at(10);
        std::cout << '\n';
      }
      std::cout << "checkpoint " << (r.best_checkpoint.empty() ? r.last_checkpoint : r.best_checkpoint) << '\n';
    } else if (*ev) {
      if (!split.empty()) eval_f.overrides.push_back("eval.split=" + split);
      const auto cfg = effective_config(eval_f);
      const std::string out = eval_f.out.empty() ? cfg.output_dir : eval_f.out;
      std::cout << csarec::render_run_config(cfg);
      const auto m = csarec::cmd_evaluate(cfg, eval_ckpt, out);
      std::cout << m.to_json().dump() << '\n';
    } else if (*sim) {
      if (!matrix.empty()) sim_f.overrides.push_back("simulator.matrix=" + matrix);
      if (rounds) sim_f.overrides.push_back("simulator.rounds=" + std::to_string(*rounds));
      if (reps) sim_f.overrides.push_back("simulator.repetitions=" + std::to_string(*reps));
      if (gamma) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", *gamma);
        sim_f.overrides.push_back(std::string("simulator.gamma=") + buf);
      }
      const auto cfg = effective_config(sim_f);
      const std::string out = sim_f.out.empty() ? cfg.output_dir : sim_f.out;
      std::cout << csarec::render_run_config(cfg);
      for (const auto& c : csarec::cmd_simulate(cfg, sim_ckpt, out))
        std::cout << c.policy << " final " << (c.curve.empty() ? 0.0 : c.curve.back()) << '\n';
    } else if (*rep) {
      std::cout << csarec::cmd_report(report_inputs, report_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "csarec: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
