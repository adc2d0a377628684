// SPDX-License-Identifier: Apache-2.0
#include "csarec/simulator.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace csarec;

namespace {

EnvironmentOptions cold_start() {
  EnvironmentOptions o;
  o.warm_start = 0;
  return o;
}

// Always recommends the next unconsumed item in id order.
class InOrderPolicy final : public Policy {
 public:
  std::string name() const override { return "in-order"; }
  int choose(const EpisodeState& state, const Environment& env, Rng&) override {
    for (int i = 0; i < env.num_items(); ++i)
      if (env.available(state, i)) return i;
    throw std::runtime_error("exhausted");
  }
};

DenseRewardMatrix random_matrix(int users, int items, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Matrix m(users, items);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return DenseRewardMatrix(m);
}

}  // namespace

TEST(Environment, StepLooksUpRewardAndGrowsHistory) {
  Matrix m(2, 2);
  m << 1, 0, 0, 1;
  const Environment env(DenseRewardMatrix(m), cold_start());
  const EpisodeState s0 = env.reset(0);
  auto [r, s1] = env.step(s0, 0);
  EXPECT_EQ(r, 1.0);
  EXPECT_EQ(s1.history, std::vector<int>{0});
  EXPECT_EQ(s1.round, 1);
  auto [r2, s2] = env.step(s1, 1);
  EXPECT_EQ(r2, 0.0);
  EXPECT_EQ(s2.history.size(), 2u);
  EXPECT_THROW(env.step(s2, 0), std::invalid_argument);
  EXPECT_THROW(env.step(s0, 2), std::out_of_range);
  EXPECT_TRUE(s0.history.empty());
}

TEST(Environment, RepeatsAllowedWhenConfigured) {
  EnvironmentOptions o = cold_start();
  o.no_repeat = false;
  const Environment env(DenseRewardMatrix(Matrix::Ones(1, 2)), o);
  auto [r, s] = env.step(env.reset(0), 1);
  EXPECT_NO_THROW(env.step(s, 1));
}

TEST(Environment, WarmStartTakesTopHeldOutItems) {
  const DenseRewardMatrix m = random_matrix(5, 20, 3);
  EnvironmentOptions o;
  o.seed = 11;
  const Environment env(m, o);
  ASSERT_EQ(env.holdout_items().size(), 4u);
  for (int u = 0; u < 5; ++u) {
    const EpisodeState s = env.reset(u);
    ASSERT_EQ(s.warm_start.size(), 3u);
    std::vector<int> sorted = env.holdout_items();
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) { return m(u, a) > m(u, b); });
    EXPECT_EQ(s.warm_start, std::vector<int>(sorted.begin(), sorted.begin() + 3));
    for (int i : s.warm_start) EXPECT_FALSE(env.available(s, i));
    EXPECT_TRUE(s.history.empty());
  }
  o.warm_start = 20;
  EXPECT_THROW(Environment(m, o), std::invalid_argument);
}

TEST(RunRounds, GeometricReturnForConstantReward) {
  const Environment env(DenseRewardMatrix(Matrix::Ones(3, 12)), cold_start());
  RandomPolicy policy;
  Rng rng(0);
  const RolloutResult r = run_rounds(env, policy, 10, 0.5, rng);
  EXPECT_EQ(r.mean_return(), 1.998046875);
  for (int u = 0; u < 3; ++u) EXPECT_EQ(r.returns(u), 1.998046875);
  ASSERT_EQ(r.cumulative.size(), 10u);
}

TEST(RunRounds, GammaZeroKeepsFirstReward) {
  const DenseRewardMatrix m = random_matrix(4, 10, 1);
  const Environment env(m, cold_start());
  InOrderPolicy policy;
  Rng rng(0);
  const RolloutResult r = run_rounds(env, policy, 5, 0.0, rng);
  for (int u = 0; u < 4; ++u) EXPECT_EQ(r.returns(u), m(u, 0));
}

TEST(RunRounds, CurvesAreNonDecreasingAndHistoryHasOneItemPerRound) {
  const Environment env(random_matrix(6, 25, 2));
  RandomPolicy policy;
  Rng rng(4);
  const RolloutResult r = run_rounds(env, policy, 10, 0.9, rng);
  for (std::size_t t = 1; t < r.cumulative.size(); ++t) EXPECT_GE(r.cumulative[t], r.cumulative[t - 1]);
  EpisodeState s = env.reset(0);
  for (int t = 0; t < 10; ++t) s = env.step(s, policy.choose(s, env, rng)).second;
  EXPECT_EQ(s.history.size(), 10u);
  EXPECT_EQ(s.round, 10);
  Rng bad(0);
  EXPECT_THROW(run_rounds(env, policy, 0, 0.5, bad), std::invalid_argument);
}

TEST(RunRounds, SingleRoundIsMeanReward) {
  const DenseRewardMatrix m = random_matrix(7, 9, 5);
  const Environment env(m, cold_start());
  InOrderPolicy policy;
  const CurveReport c = evaluate_policy(policy, env, 1, 2, 0.5, 0);
  ASSERT_EQ(c.curve.size(), 1u);
  EXPECT_NEAR(c.curve[0], m.values().col(0).mean(), 1e-15);
}

TEST(BruteForce, GreedyOnTrueMatrixIsOptimal) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int items = std::uniform_int_distribution<int>(3, 8)(rng);
    const int rounds = std::min(items, std::uniform_int_distribution<int>(1, 4)(rng));
    const DenseRewardMatrix m = random_matrix(3, items, 100 + trial);
    const Environment env(m, cold_start());
    OraclePolicy oracle;
    Rng unused(0);
    const RolloutResult r = run_rounds(env, oracle, rounds, 0.5, unused);
    for (int u = 0; u < 3; ++u) EXPECT_NEAR(r.returns(u), brute_force_optimum(m, u, rounds, 0.5), 1e-12);
  }
  Matrix three(1, 3);
  three << 0.2, 1.0, 0.5;
  // Best sequence 1, 2, 0: 1 + 0.5*0.5 + 0.25*0.2.
  EXPECT_NEAR(brute_force_optimum(DenseRewardMatrix(three), 0, 3, 0.5), 1.3, 1e-15);
  EXPECT_THROW(brute_force_optimum(DenseRewardMatrix(three), 0, 4, 0.5), std::invalid_argument);
}

TEST(EvaluatePolicy, OracleDominatesRandomAtEveryRound) {
  const Environment env(random_matrix(20, 30, 6));
  OraclePolicy oracle;
  RandomPolicy random;
  const CurveReport o = evaluate_policy(oracle, env, 10, 3, 0.5, 1);
  const CurveReport r = evaluate_policy(random, env, 10, 3, 0.5, 1);
  for (std::size_t t = 0; t < 10; ++t) EXPECT_GE(o.curve[t], r.curve[t]) << "round " << t;
}

TEST(EvaluatePolicy, SameSeedSameCurves) {
  const Environment env(random_matrix(8, 15, 7));
  RandomPolicy policy;
  const CurveReport a = evaluate_policy(policy, env, 6, 2, 0.7, 42);
  const CurveReport b = evaluate_policy(policy, env, 6, 2, 0.7, 42);
  EXPECT_EQ(a.curve, b.curve);
  EXPECT_EQ(a.repetitions, b.repetitions);
  EXPECT_NE(a.repetitions[0], a.repetitions[1]);
  const auto j = a.to_json();
  EXPECT_EQ(j["policy"], "random");
  EXPECT_EQ(j["curve"].size(), 6u);
}

TEST(EvaluatePolicy, ModelPolicyChecksCatalogue) {
  EncoderConfig enc;
  enc.embedding_dim = 8;
  enc.max_len = 5;
  const RecommenderModel model(CatalogInfo{15}, enc, Activation::identity, 0);
  const Environment env(random_matrix(4, 15, 9));
  const CurveReport a = evaluate_policy(model, env, 5, 2, 0.5, 3);
  const CurveReport b = evaluate_policy(model, env, 5, 2, 0.5, 3);
  EXPECT_EQ(a.curve, b.curve);
  // A frozen model is deterministic, so repetitions agree.
  EXPECT_EQ(a.repetitions[0], a.repetitions[1]);
  const Environment other(random_matrix(4, 16, 9));
  EXPECT_THROW(evaluate_policy(model, other, 5, 1, 0.5, 0), std::invalid_argument);
}

TEST(DenseRewardMatrix, TextRoundTripAndErrors) {
  const DenseRewardMatrix m = low_rank_matrix(5, 7, 2, 3);
  EXPECT_GT(m.values().minCoeff(), 0.0);
  EXPECT_LT(m.values().maxCoeff(), 2.0);
  EXPECT_EQ(low_rank_matrix(5, 7, 2, 3).values(), m.values());
  std::stringstream ss;
  m.write(ss);
  EXPECT_EQ(DenseRewardMatrix::read(ss).values(), m.values());
  std::istringstream truncated("2 2\n1 2 3\n");
  EXPECT_THROW(DenseRewardMatrix::read(truncated), std::runtime_error);
  std::istringstream trailing("1 1\n1 2\n");
  EXPECT_THROW(DenseRewardMatrix::read(trailing), std::runtime_error);
  std::istringstream negative("1 2\n1 -2\n");
  EXPECT_THROW(DenseRewardMatrix::read(negative), std::invalid_argument);
}
