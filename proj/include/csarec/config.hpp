// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/augment.hpp"
#include "csarec/datasets.hpp"
#include "csarec/encoders.hpp"
#include "csarec/heads.hpp"
#include "csarec/offline_eval.hpp"
#include "csarec/simulator.hpp"
#include "csarec/trainer.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace csarec {

struct DataConfig {
  // Raw interaction TSV; empty or "synthetic" generates the [synthetic] corpus.
  std::string input;
  // Directory written by prepare-data and read by train/evaluate.
  std::string prepared = "prepared";
  // "default" (click/purchase) or "retail_rocket" (view/addtocart).
  std::string labels = "default";
  RewardMap rewards;
  SplitRatios split;
  std::uint64_t split_seed = 0;
};

struct SyntheticConfig {
  int sessions = 10000;
  int items = 50;
  int clusters = 2;
  double leak = 0.05;
  int favoured = 3;
  double favoured_mass = 0.8;
  double purchase_min = 0.05;
  double purchase_max = 0.5;
  int min_length = 3;
  int max_length = 12;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  ScoreSource score_source = ScoreSource::supervised;
  // "purchase", "click" or "all".
  std::string filter = "purchase";
  std::vector<int> ks{5, 10, 20};
  std::uint64_t seed = 0;
  // Which prepared split evaluate ranks: "test" or "validation".
  std::string split = "test";
};

struct SimulatorConfig {
  // Matrix file; empty generates a low-rank matrix from the fields below.
  std::string matrix;
  int users = 100;
  int rank = 4;
  int rounds = 10;
  double gamma = 0.5;
  int repetitions = 3;
  bool no_repeat = true;
  int warm_start = 3;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string preset;
  DataConfig data;
  SyntheticConfig synthetic;
  EncoderConfig encoder;
  Activation head_activation = Activation::identity;
  TrainConfig train;
  EvalConfig eval;
  SimulatorConfig simulator;
  std::string output_dir = "runs";

  EvalOptions eval_options() const;
  ClusterCorpusSpec corpus_spec() const;
  EnvironmentOptions environment_options() const;
};

// All problems found, one per entry; what() joins them.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// normal, sqn, csa-n, csa-u, csa-m, csa-d.
const std::vector<std::string>& preset_names();
// Applies the preset's weights and strategy on top of `cfg`.
void apply_preset(RunConfig& cfg, const std::string& name);

// Sectioned key=value text ('#' or ';' comments). A "preset" key in [train]
// is applied first, explicit keys then override it. Unknown sections/keys and
// malformed values are collected and thrown together as ConfigError.
RunConfig parse_run_config(std::istream& in, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

// Sets one "section.key" to a textual value (flag overrides).
void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

// Throws ConfigError listing every invalid field.
void validate(const RunConfig& cfg);

// Effective config in the same text format parse_run_config reads.
std::string render_run_config(const RunConfig& cfg);

// JSON forms used inside checkpoints.
nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace csarec
