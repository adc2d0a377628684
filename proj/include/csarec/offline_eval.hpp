// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/datasets.hpp"
#include "csarec/model.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace csarec {

struct MetricReport {
  std::vector<int> ks{5, 10, 20};
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  std::size_t num_eval_events = 0;

  double hr_at(int k) const { return hr.at(k); }
  double ndcg_at(int k) const { return ndcg.at(k); }

  // {"hr@5": ..., "ndcg@5": ..., ..., "n": ...}
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

class EmptyEvaluation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RankCounts {
  int greater = 0;
  int ties = 0;  // other items with exactly the target's score
};

RankCounts count_rank(const Vector& scores, int target);

// 1 + #greater + U{0..#ties}; the draw only happens when there are ties.
int rank_of_target(const Vector& scores, int target, Rng& tie_rng);

// Throws EmptyEvaluation for an empty rank list.
MetricReport hr_ndcg(std::span<const int> ranks, std::span<const int> ks = std::span<const int>());

enum class ScoreSource { supervised, q_a, q_b };

std::string to_string(ScoreSource s);
ScoreSource score_source_from_string(const std::string& s);

struct EvalOptions {
  // Events kept for ranking; std::nullopt keeps everything.
  std::optional<Feedback> filter = Feedback::purchase;
  std::uint64_t seed = 0;
  std::vector<int> ks{5, 10, 20};
  ScoreSource source = ScoreSource::supervised;
  int batch_size = 1024;
  // false lets scoring run on several threads; results do not change.
  bool deterministic = true;
};

// Ranks the full catalogue for each kept tuple's state and scores its action.
// Ties are broken with a per-event stream derived from (seed, event index).
MetricReport evaluate(const RecommenderModel& model, std::span<const ReplayTuple> tuples, const EvalOptions& options);

// Ranks for each kept tuple, in input order.
std::vector<int> event_ranks(const RecommenderModel& model, std::span<const ReplayTuple> tuples,
                             const EvalOptions& options);

}  // namespace csarec
