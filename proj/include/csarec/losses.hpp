// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/augment.hpp"
#include "csarec/autodiff.hpp"
#include "csarec/heads.hpp"

#include <span>
#include <vector>

namespace csarec {

struct LossWeights {
  double w_s = 1.0;
  double w_q = 1.0;
  double w_a = 1.0;
  double w_c = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double supervised = 0.0;
  double q_td = 0.0;
  double augmented = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// ---- per-example reference forms --------------------------------------------

// -log softmax(scores)[target]; throws on non-finite scores or a bad target.
double supervised_ce(const Vector& scores, int target);
double q_td_loss(double q_sa, double target);
// Sum over views of squared augmented TD errors; 0 when there are no views.
double augmented_td_loss(const std::vector<AugmentedView>& views_t, const std::vector<AugmentedView>& views_next,
                         int action, double reward, double gamma, const DoubleQPair& pair, QHeadId online,
                         bool terminal = false);
// -log sigmoid((q_neg - mean)^2 - (q_pos - mean)^2); throws when q_views is empty.
double contrastive_state_loss(double q_pos, double q_neg, std::span<const double> q_views);
double contrastive_action_loss(double q_pos, double q_neg, std::span<const double> q_views);

// Component values are kept unweighted; total is the weighted sum.
LossBreakdown joint_loss(const LossBreakdown& components, const LossWeights& weights);

// ---- batched tape forms (means over the batch) ------------------------------

autodiff::Var batch_supervised_ce(const autodiff::Var& logits, std::span<const int> targets);
// mean((target - q)^2); q is B×1, targets are detached.
autodiff::Var batch_td(autodiff::Tape& tape, const autodiff::Var& q_sa, const Vector& targets);
// mean over rows of -log sigmoid((q_neg - q_bar)^2 - (q_pos - q_bar)^2); all B×1.
autodiff::Var batch_contrastive(const autodiff::Var& q_pos, const autodiff::Var& q_neg, const autodiff::Var& q_bar);

}  // namespace csarec
