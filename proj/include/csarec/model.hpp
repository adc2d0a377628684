// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/encoders.hpp"
#include "csarec/heads.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace csarec {

// Shared encoder, supervised head and a pair of Q heads.
class RecommenderModel {
 public:
  RecommenderModel(const CatalogInfo& catalog, const EncoderConfig& encoder, Activation head_activation,
                   std::uint64_t seed);
  // Takes an externally built encoder (e.g. a test double).
  RecommenderModel(std::unique_ptr<SequenceEncoder> encoder, Activation head_activation, std::uint64_t seed);

  RecommenderModel(const RecommenderModel& other);
  RecommenderModel& operator=(const RecommenderModel& other);
  RecommenderModel(RecommenderModel&&) noexcept = default;
  RecommenderModel& operator=(RecommenderModel&&) noexcept = default;

  const CatalogInfo& catalog() const { return encoder_->catalog(); }
  SequenceEncoder& encoder() { return *encoder_; }
  const SequenceEncoder& encoder() const { return *encoder_; }

  LinearHead supervised;
  DoubleQPair q;

  // Encoder first, then supervised, then Q head a, then b.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);

  void zero_grad();

 private:
  std::unique_ptr<SequenceEncoder> encoder_;
};

}  // namespace csarec
