// SPDX-License-Identifier: Apache-2.0
#include "csarec/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace csarec {

using autodiff::Tape;
using autodiff::Var;

void LossWeights::validate() const {
  for (double w : {w_s, w_q, w_a, w_c})
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("loss weights must be finite and >= 0");
}

double supervised_ce(const Vector& scores, int target) {
  if (target < 0 || target >= scores.size())
    throw std::out_of_range("supervised_ce: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(scores.size()) + ")");
  if (!scores.allFinite()) throw std::domain_error("supervised_ce: non-finite scores");
  const double m = scores.maxCoeff();
  const double lse = m + std::log((scores.array() - m).exp().sum());
  return lse - scores(target);
}

double q_td_loss(double q_sa, double target) {
  const double e = target - q_sa;
  return e * e;
}

double augmented_td_loss(const std::vector<AugmentedView>& views_t, const std::vector<AugmentedView>& views_next,
                         int action, double reward, double gamma, const DoubleQPair& pair, QHeadId online,
                         bool terminal) {
  if (views_t.size() != views_next.size())
    throw std::invalid_argument("augmented_td_loss: " + std::to_string(views_t.size()) + " current views but " +
                                std::to_string(views_next.size()) + " next views");
  double total = 0.0;
  for (std::size_t j = 0; j < views_t.size(); ++j) {
    const double target = double_q_target(reward, views_next[j].state, pair, online, gamma, terminal);
    const Vector q = pair.head(online).scores(views_t[j].state);
    if (action < 0 || action >= q.size()) throw std::out_of_range("augmented_td_loss: action out of range");
    total += q_td_loss(q(action), target);
  }
  return total;
}

namespace {

double neg_log_sigmoid(double x) {
  // softplus(-x), stable for both signs
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

double contrastive(double q_pos, double q_neg, std::span<const double> q_views) {
  if (q_views.empty()) throw std::invalid_argument("contrastive loss needs at least one view");
  double bar = 0.0;
  for (double q : q_views) bar += q;
  bar /= static_cast<double>(q_views.size());
  const double dn = q_neg - bar;
  const double dp = q_pos - bar;
  return neg_log_sigmoid(dn * dn - dp * dp);
}

}  // namespace

double contrastive_state_loss(double q_pos, double q_neg, std::span<const double> q_views) {
  return contrastive(q_pos, q_neg, q_views);
}

double contrastive_action_loss(double q_pos, double q_neg, std::span<const double> q_views) {
  return contrastive(q_pos, q_neg, q_views);
}

LossBreakdown joint_loss(const LossBreakdown& c, const LossWeights& w) {
  LossBreakdown out = c;
  out.total = w.w_s * c.supervised + w.w_q * c.q_td + w.w_a * c.augmented + w.w_c * c.contrastive;
  return out;
}

Var batch_supervised_ce(const Var& logits, std::span<const int> targets) {
  return autodiff::mean(autodiff::softmax_cross_entropy(logits, targets));
}

Var batch_td(Tape& tape, const Var& q_sa, const Vector& targets) {
  return autodiff::mean(autodiff::square(autodiff::sub(tape.constant(targets), q_sa)));
}

Var batch_contrastive(const Var& q_pos, const Var& q_neg, const Var& q_bar) {
  using namespace autodiff;
  Var far = square(sub(q_neg, q_bar));
  Var near = square(sub(q_pos, q_bar));
  return mean(neg_log_sigmoid(sub(far, near)));
}

}  // namespace csarec
