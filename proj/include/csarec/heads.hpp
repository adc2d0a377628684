// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/autodiff.hpp"
#include "csarec/datasets.hpp"
#include "csarec/encoders.hpp"

#include <string>
#include <vector>

namespace csarec {

enum class Activation { identity, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// scores = act(W s + b), one score per item.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(const std::string& name, int in_dim, int out_dim, Activation activation, Rng& init_rng);

  autodiff::Var forward(autodiff::Tape& tape, const autodiff::Var& states);
  // B×d -> B×|I|, values only.
  Matrix infer(const Matrix& states) const;
  Vector scores(const StateVector& s) const;

  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  Parameter weight;  // |I|×d
  Parameter bias;    // 1×|I|
  Activation activation = Activation::identity;
};

using SupervisedHead = LinearHead;
using QHead = LinearHead;

enum class QHeadId { a, b };

inline QHeadId other(QHeadId id) { return id == QHeadId::a ? QHeadId::b : QHeadId::a; }
std::string to_string(QHeadId id);

// Two Q heads over a shared encoder. Each step one is online, the other
// evaluates the online head's greedy next action.
struct DoubleQPair {
  QHead a;
  QHead b;

  QHead& head(QHeadId id) { return id == QHeadId::a ? a : b; }
  const QHead& head(QHeadId id) const { return id == QHeadId::a ? a : b; }
};

// r + gamma * Q_other(s', argmax_a Q_online(s', a)), or r when terminal.
// Argmax ties go to the lowest index.
double double_q_target(double reward, const Vector& q_online_next, const Vector& q_other_next, double gamma,
                       bool terminal);
double double_q_target(double reward, const StateVector& next_state, const DoubleQPair& pair, QHeadId online,
                       double gamma, bool terminal);

// Row-wise form over a batch of next-state Q values.
Vector double_q_targets(const Vector& rewards, const Matrix& q_online_next, const Matrix& q_other_next, double gamma,
                        const std::vector<unsigned char>& terminal);

}  // namespace csarec
