// SPDX-License-Identifier: Apache-2.0
#include "csarec/heads.hpp"

#include <stdexcept>

namespace csarec {

using autodiff::Tape;
using autodiff::Var;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(QHeadId id) { return id == QHeadId::a ? "a" : "b"; }

LinearHead::LinearHead(const std::string& name, int in_dim, int out_dim, Activation act, Rng& init_rng)
    : weight(name + ".weight", glorot(out_dim, in_dim, init_rng)),
      bias(name + ".bias", Matrix::Zero(1, out_dim)),
      activation(act) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("head dimensions must be positive");
}

Var LinearHead::forward(Tape& tape, const Var& states) {
  if (states.cols() != in_dim())
    throw std::invalid_argument("head " + weight.name + " expects " + std::to_string(in_dim()) + "-d states, got " +
                                std::to_string(states.cols()));
  Var z = autodiff::add_row(autodiff::matmul_nt(states, tape.parameter(weight)), tape.parameter(bias));
  switch (activation) {
    case Activation::tanh:
      return autodiff::tanh(z);
    case Activation::relu:
      return autodiff::relu(z);
    case Activation::identity:
      break;
  }
  return z;
}

Matrix LinearHead::infer(const Matrix& states) const {
  if (states.cols() != in_dim())
    throw std::invalid_argument("head " + weight.name + " expects " + std::to_string(in_dim()) + "-d states, got " +
                                std::to_string(states.cols()));
  Matrix z = autodiff::product_nt(states, weight.value);
  z.rowwise() += bias.value.row(0);
  switch (activation) {
    case Activation::tanh:
      return autodiff::tanh_values(z);
    case Activation::relu:
      return z.cwiseMax(0.0);
    case Activation::identity:
      break;
  }
  return z;
}

Vector LinearHead::scores(const StateVector& s) const { return infer(s.transpose()).row(0).transpose(); }

double double_q_target(double reward, const Vector& q_online_next, const Vector& q_other_next, double gamma,
                       bool terminal) {
  if (terminal) return reward;
  if (q_online_next.size() == 0 || q_online_next.size() != q_other_next.size())
    throw std::invalid_argument("double_q_target: Q vectors must be non-empty and of equal size");
  Eigen::Index best = 0;
  q_online_next.maxCoeff(&best);
  return reward + gamma * q_other_next(best);
}

double double_q_target(double reward, const StateVector& next_state, const DoubleQPair& pair, QHeadId online,
                       double gamma, bool terminal) {
  if (terminal) return reward;
  return double_q_target(reward, pair.head(online).scores(next_state), pair.head(other(online)).scores(next_state),
                         gamma, false);
}

Vector double_q_targets(const Vector& rewards, const Matrix& q_online_next, const Matrix& q_other_next, double gamma,
                        const std::vector<unsigned char>& terminal) {
  const Eigen::Index n = rewards.size();
  if (q_online_next.rows() != n || q_other_next.rows() != n || static_cast<Eigen::Index>(terminal.size()) != n)
    throw std::invalid_argument("double_q_targets: batch sizes disagree");
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (terminal[static_cast<std::size_t>(i)]) {
      out(i) = rewards(i);
      continue;
    }
    Eigen::Index best = 0;
    q_online_next.row(i).maxCoeff(&best);
    out(i) = rewards(i) + gamma * q_other_next(i, best);
  }
  return out;
}

}  // namespace csarec
