// SPDX-License-Identifier: Apache-2.0
#include "csarec/model.hpp"

namespace csarec {

RecommenderModel::RecommenderModel(const CatalogInfo& catalog, const EncoderConfig& encoder,
                                   Activation head_activation, std::uint64_t seed) {
  Rng rng(seed);
  encoder_ = make_encoder(encoder, catalog, rng);
  const int d = encoder.embedding_dim;
  supervised = LinearHead("supervised", d, catalog.num_items, Activation::identity, rng);
  q.a = LinearHead("q_a", d, catalog.num_items, head_activation, rng);
  q.b = LinearHead("q_b", d, catalog.num_items, head_activation, rng);
}

RecommenderModel::RecommenderModel(std::unique_ptr<SequenceEncoder> encoder, Activation head_activation,
                                   std::uint64_t seed)
    : encoder_(std::move(encoder)) {
  Rng rng(seed);
  const int d = encoder_->dim();
  const int n = encoder_->catalog().num_items;
  supervised = LinearHead("supervised", d, n, Activation::identity, rng);
  q.a = LinearHead("q_a", d, n, head_activation, rng);
  q.b = LinearHead("q_b", d, n, head_activation, rng);
}

RecommenderModel::RecommenderModel(const RecommenderModel& other)
    : supervised(other.supervised), q(other.q), encoder_(other.encoder_->clone()) {}

RecommenderModel& RecommenderModel::operator=(const RecommenderModel& other) {
  if (this != &other) {
    supervised = other.supervised;
    q = other.q;
    encoder_ = other.encoder_->clone();
  }
  return *this;
}

std::vector<Parameter*> RecommenderModel::parameters() {
  std::vector<Parameter*> out = encoder_->parameters();
  for (auto* p : supervised.parameters()) out.push_back(p);
  for (auto* p : q.a.parameters()) out.push_back(p);
  for (auto* p : q.b.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> RecommenderModel::parameters() const {
  auto ps = const_cast<RecommenderModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Parameter* RecommenderModel::find(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void RecommenderModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

}  // namespace csarec
