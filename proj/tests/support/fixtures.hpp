// SPDX-License-Identifier: Apache-2.0
// Small models and datasets shared by the unit and acceptance tests.
#pragma once

#include "oracles.hpp"

#include "csarec/trainer.hpp"

#include <cstring>
#include <memory>
#include <string>
#include <vector>

namespace csarec::testing {

// ---- chain MDP -------------------------------------------------------------

struct ChainFixture {
  CatalogInfo catalog;
  int length = 0;
  std::vector<double> rewards;
  double gamma = 0.5;
  std::vector<ReplayTuple> tuples;
  // rows = prefix length - 1, one column per item
  Matrix q_star;
};

// Chain over prefixes of the session 0, 1, ..., K. From prefix length k
// (k = 1..K) every item is one tuple: item k pays rewards[k-1], any other item
// pays 0, all move to length k + 1 and length K is terminal. Covering every
// action makes Q* the unique fixed point; with only the logged action the
// bootstrap argmax lands on untrained entries.
inline ChainFixture make_chain(std::vector<double> rewards = {0.0, 0.0, 1.0}, double gamma = 0.5) {
  ChainFixture f;
  const int K = static_cast<int>(rewards.size());
  f.catalog = CatalogInfo{K + 1};
  f.length = K;
  f.rewards = rewards;
  f.gamma = gamma;
  for (int k = 1; k <= K; ++k) {
    std::vector<int> prefix(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) prefix[static_cast<std::size_t>(i)] = i;
    for (int a = 0; a < f.catalog.num_items; ++a) {
      std::vector<int> next = prefix;
      next.push_back(a);
      ReplayTuple t;
      t.state_seq = window(prefix, prefix.size(), K, f.catalog.pad_id());
      t.next_seq = window(next, next.size(), K, f.catalog.pad_id());
      t.action = a;
      t.reward = a == k ? rewards[static_cast<std::size_t>(k - 1)] : 0.0;
      t.terminal = k == K;
      t.feedback = t.reward > 0.0 ? Feedback::purchase : Feedback::click;
      f.tuples.push_back(t);
    }
  }
  f.q_star = chain_value_iteration(rewards, f.catalog.num_items, gamma);
  return f;
}

inline RecommenderModel tabular_model(const ChainFixture& f, std::uint64_t seed) {
  return RecommenderModel(std::make_unique<TabularLengthEncoder>(f.length, f.catalog), Activation::identity, seed);
}

// Both Q heads hold Q* as a lookup table.
inline RecommenderModel q_star_model(const ChainFixture& f) {
  RecommenderModel m = tabular_model(f, 0);
  for (QHeadId id : {QHeadId::a, QHeadId::b}) {
    m.q.head(id).weight.value = f.q_star.transpose();
    m.q.head(id).bias.value.setZero();
  }
  return m;
}

inline TrainConfig q_only_config(double learning_rate) {
  TrainConfig cfg;
  cfg.weights = {0.0, 1.0, 0.0, 0.0};
  cfg.contrastive_mode = ContrastiveMode::off;
  cfg.augmentation.n = 0;
  cfg.learning_rate = learning_rate;
  return cfg;
}

struct ChainRun {
  // Mean TD loss after every step.
  std::vector<double> trace;
  RecommenderModel model;
};

// Q-only training on the whole chain each step.
inline ChainRun train_chain(const ChainFixture& f, int steps, const TrainConfig& cfg, std::uint64_t seed) {
  TrainState state = make_train_state(tabular_model(f, seed), cfg);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    train_step(state, f.tuples, cfg);
    trace.push_back(mean_td_loss(state.model, f.tuples, f.gamma));
  }
  return {std::move(trace), std::move(state.model)};
}

// Largest |Q(s, a) - Q*(s, a)| over both heads and every chain tuple.
inline double max_q_star_gap(const RecommenderModel& m, const ChainFixture& f) {
  double gap = 0.0;
  for (const ReplayTuple& t : f.tuples) {
    const int row = true_length(t.state_seq, f.catalog.pad_id()) - 1;
    const StateVector s = m.encoder().infer(t.state_seq);
    for (QHeadId id : {QHeadId::a, QHeadId::b})
      gap = std::max(gap, std::abs(m.q.head(id).scores(s)(t.action) - f.q_star(row, t.action)));
  }
  return gap;
}

// ---- small corpus ----------------------------------------------------------

struct SmallCorpus {
  CatalogInfo catalog;
  std::vector<ReplayTuple> train;
  std::vector<ReplayTuple> validation;
};

inline SmallCorpus small_corpus(int sessions, int num_items, int length, std::uint64_t seed) {
  ClusterCorpusSpec spec;
  spec.num_sessions = sessions;
  spec.chain.num_items = num_items;
  spec.seed = seed;
  const auto all = generate_cluster_corpus(spec);
  const SessionSplit split = split_sessions(all, SplitRatios{0.8, 0.1, 0.1}, seed);
  SmallCorpus c;
  c.catalog = CatalogInfo{num_items};
  c.train = build_replay_tuples(split.train, length, RewardMap{}, c.catalog);
  c.validation = build_replay_tuples(split.validation, length, RewardMap{}, c.catalog);
  return c;
}

inline EncoderConfig tiny_encoder(EncoderKind kind, int d = 8, int length = 4) {
  EncoderConfig c;
  c.kind = kind;
  c.embedding_dim = d;
  c.max_len = length;
  return c;
}

inline bool same_bits(const LossBreakdown& a, const LossBreakdown& b) { return std::memcmp(&a, &b, sizeof a) == 0; }

inline bool same_parameters(const RecommenderModel& a, const RecommenderModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->name != pb[i]->name || pa[i]->value.size() != pb[i]->value.size() ||
        std::memcmp(pa[i]->value.data(), pb[i]->value.data(), sizeof(double) * pa[i]->value.size()) != 0)
      return false;
  return true;
}

// ---- step-loss gradients ---------------------------------------------------

// Finite-difference check of build_step_loss for a fixed plan (targets and
// augmentation draws frozen) over every model parameter.
inline GradCheck check_step_gradients(RecommenderModel& model, const StepPlan& plan, const TrainConfig& cfg) {
  return check_gradients(model.parameters(), [&](autodiff::Tape& tape) {
    return build_step_loss(tape, model, plan, cfg).total;
  });
}

}  // namespace csarec::testing
