// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/datasets.hpp"
#include "csarec/model.hpp"
#include "csarec/offline_eval.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace csarec {

// Fully observed user×item feedback (e.g. watch ratios), entries >= 0.
class DenseRewardMatrix {
 public:
  DenseRewardMatrix() = default;
  explicit DenseRewardMatrix(Matrix rewards);

  int num_users() const { return static_cast<int>(rewards_.rows()); }
  int num_items() const { return static_cast<int>(rewards_.cols()); }
  double operator()(int user, int item) const { return rewards_(user, item); }
  const Matrix& values() const { return rewards_; }

  // Text: "num_users num_items" header, then row-major values.
  static DenseRewardMatrix read(std::istream& in);
  static DenseRewardMatrix load(const std::string& path);
  void write(std::ostream& out) const;

 private:
  Matrix rewards_;
};

// Watch-ratio-like matrix from a seeded low-rank latent model:
// r(u, i) = 2 * sigmoid(<p_u, q_i> + b_i), so entries lie in (0, 2).
DenseRewardMatrix low_rank_matrix(int num_users, int num_items, int rank, std::uint64_t seed);

struct EpisodeState {
  int user = 0;
  // Warm-start items; consumed but not part of the recommendation history.
  std::vector<int> warm_start;
  std::vector<int> history;
  int round = 0;
};

struct EnvironmentOptions {
  bool no_repeat = true;
  int warm_start = 3;
  // Share of columns reserved for picking warm-start items.
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

class Environment {
 public:
  Environment(DenseRewardMatrix matrix, EnvironmentOptions options = {});

  const DenseRewardMatrix& matrix() const { return matrix_; }
  const EnvironmentOptions& options() const { return options_; }
  int num_users() const { return matrix_.num_users(); }
  int num_items() const { return matrix_.num_items(); }
  const std::vector<int>& holdout_items() const { return holdout_; }

  // Initial state: the user's top warm-start items among the held-out columns.
  EpisodeState reset(int user) const;
  // Reward and successor state; throws on an invalid or (with no-repeat) consumed item.
  std::pair<double, EpisodeState> step(const EpisodeState& state, int item) const;
  bool available(const EpisodeState& state, int item) const;

 private:
  DenseRewardMatrix matrix_;
  EnvironmentOptions options_;
  std::vector<int> holdout_;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual int choose(const EpisodeState& state, const Environment& env, Rng& rng) = 0;
};

class RandomPolicy final : public Policy {
 public:
  std::string name() const override { return "random"; }
  int choose(const EpisodeState& state, const Environment& env, Rng& rng) override;
};

// Greedy on the true reward matrix.
class OraclePolicy final : public Policy {
 public:
  std::string name() const override { return "oracle"; }
  int choose(const EpisodeState& state, const Environment& env, Rng& rng) override;
};

// Argmax of model scores over still-available items, given the encoded
// warm start + history window.
class ModelPolicy final : public Policy {
 public:
  explicit ModelPolicy(const RecommenderModel& model, ScoreSource source = ScoreSource::supervised);
  std::string name() const override { return "model"; }
  int choose(const EpisodeState& state, const Environment& env, Rng& rng) override;

 private:
  const RecommenderModel& model_;
  ScoreSource source_;
};

struct RolloutResult {
  // users × rounds immediate rewards
  Matrix rewards;
  // Per-user discounted return over all rounds.
  Vector returns;
  // Mean over users of the discounted return up to and including each round.
  std::vector<double> cumulative;
  double mean_return() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

RolloutResult run_rounds(const Environment& env, Policy& policy, int rounds, double gamma, Rng& rng);

struct CurveReport {
  std::string policy;
  int rounds = 0;
  double gamma = 0.0;
  // Averaged over repetitions.
  std::vector<double> curve;
  std::vector<std::vector<double>> repetitions;

  nlohmann::json to_json() const;
};

// Repetition r draws from a stream seeded by (seed, r).
CurveReport evaluate_policy(Policy& policy, const Environment& env, int rounds, int repetitions, double gamma,
                            std::uint64_t seed);
// Throws when the model catalogue and the environment disagree on item count.
CurveReport evaluate_policy(const RecommenderModel& model, const Environment& env, int rounds, int repetitions,
                            double gamma, std::uint64_t seed, ScoreSource source = ScoreSource::supervised);

// Exhaustive maximum of the discounted return for one user over repeat-free
// item sequences of length `rounds`, excluding `consumed`.
double brute_force_optimum(const DenseRewardMatrix& m, int user, int rounds, double gamma,
                           const std::vector<int>& consumed = {});

}  // namespace csarec
