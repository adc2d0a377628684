// SPDX-License-Identifier: Apache-2.0
#include "csarec/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace csarec {

void Adam::step(const std::vector<Parameter*>& params) {
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  for (Parameter* p : params) {
    Slot& s = slots_[p->name];
    if (s.m.size() == 0) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    } else if (s.m.rows() != p->value.rows() || s.m.cols() != p->value.cols()) {
      throw std::invalid_argument("optimizer state shape mismatch for " + p->name);
    }
    ++s.step;
    s.m = b1 * s.m + (1.0 - b1) * p->grad;
    s.v = b2 * s.v + (1.0 - b2) * p->grad.cwiseProduct(p->grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    p->value.array() -= config_.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + config_.epsilon);
  }
}

}  // namespace csarec
