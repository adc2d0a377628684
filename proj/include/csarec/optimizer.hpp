// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csarec {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments and step counts are kept per parameter
// name, so a parameter that sits out a step keeps its own schedule.
class Adam {
 public:
  struct Slot {
    Matrix m;
    Matrix v;
    std::int64_t step = 0;
  };

  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(const std::vector<Parameter*>& params);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamConfig config_;
  std::map<std::string, Slot> slots_;
};

}  // namespace csarec
