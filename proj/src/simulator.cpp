// SPDX-License-Identifier: Apache-2.0
#include "csarec/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace csarec {

DenseRewardMatrix::DenseRewardMatrix(Matrix rewards) : rewards_(std::move(rewards)) {
  if (rewards_.rows() < 1 || rewards_.cols() < 1) throw std::invalid_argument("reward matrix must be non-empty");
  for (Eigen::Index u = 0; u < rewards_.rows(); ++u)
    for (Eigen::Index i = 0; i < rewards_.cols(); ++i)
      if (!std::isfinite(rewards_(u, i)) || rewards_(u, i) < 0.0)
        throw std::invalid_argument("reward matrix entry (" + std::to_string(u) + ", " + std::to_string(i) +
                                    ") must be finite and >= 0");
}

DenseRewardMatrix DenseRewardMatrix::read(std::istream& in) {
  long users = 0;
  long items = 0;
  if (!(in >> users >> items) || users < 1 || items < 1)
    throw std::runtime_error("reward matrix: expected a 'num_users num_items' header");
  Matrix m(users, items);
  for (long u = 0; u < users; ++u)
    for (long i = 0; i < items; ++i)
      if (!(in >> m(u, i)))
        throw std::runtime_error("reward matrix: missing or malformed value at user " + std::to_string(u) + ", item " +
                                 std::to_string(i));
  std::string extra;
  if (in >> extra) throw std::runtime_error("reward matrix: trailing data after " + std::to_string(users * items) + " values");
  return DenseRewardMatrix(std::move(m));
}

DenseRewardMatrix DenseRewardMatrix::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reward matrix " + path);
  return read(in);
}

void DenseRewardMatrix::write(std::ostream& out) const {
  out << num_users() << ' ' << num_items() << '\n';
  out.precision(17);
  for (int u = 0; u < num_users(); ++u) {
    for (int i = 0; i < num_items(); ++i) out << (i ? " " : "") << rewards_(u, i);
    out << '\n';
  }
}

DenseRewardMatrix low_rank_matrix(int num_users, int num_items, int rank, std::uint64_t seed) {
  if (num_users < 1 || num_items < 1 || rank < 1) throw std::invalid_argument("low_rank_matrix: sizes must be positive");
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
  std::normal_distribution<double> bias(0.0, 0.5);
  Matrix p(num_users, rank), q(num_items, rank);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = n(rng);
  Vector b(num_items);
  for (int i = 0; i < num_items; ++i) b(i) = bias(rng);
  Matrix logits = p * q.transpose();
  logits.rowwise() += b.transpose();
  return DenseRewardMatrix((2.0 / (1.0 + (-logits.array()).exp())).matrix());
}

// ---- environment ------------------------------------------------------------------

Environment::Environment(DenseRewardMatrix matrix, EnvironmentOptions options)
    : matrix_(std::move(matrix)), options_(options) {
  if (options_.warm_start < 0) throw std::invalid_argument("warm_start must be >= 0");
  if (!(options_.holdout_fraction >= 0.0 && options_.holdout_fraction < 1.0))
    throw std::invalid_argument("holdout_fraction must lie in [0, 1)");
  if (options_.warm_start > 0) {
    const int n = num_items();
    const int count = std::max(options_.warm_start, static_cast<int>(std::lround(options_.holdout_fraction * n)));
    if (count >= n) throw std::invalid_argument("warm-start holdout would leave no items to recommend");
    std::vector<int> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), 0);
    Rng rng(options_.seed);
    std::shuffle(cols.begin(), cols.end(), rng);
    holdout_.assign(cols.begin(), cols.begin() + count);
    std::sort(holdout_.begin(), holdout_.end());
  }
}

EpisodeState Environment::reset(int user) const {
  if (user < 0 || user >= num_users()) throw std::out_of_range("user " + std::to_string(user) + " out of range");
  EpisodeState s;
  s.user = user;
  if (options_.warm_start > 0) {
    std::vector<int> cols = holdout_;
    // Highest reward first, lower item id on ties.
    std::stable_sort(cols.begin(), cols.end(),
                     [&](int a, int b) { return matrix_(user, a) > matrix_(user, b); });
    s.warm_start.assign(cols.begin(), cols.begin() + options_.warm_start);
  }
  return s;
}

bool Environment::available(const EpisodeState& state, int item) const {
  if (item < 0 || item >= num_items()) return false;
  if (!options_.no_repeat) return true;
  return std::find(state.history.begin(), state.history.end(), item) == state.history.end() &&
         std::find(state.warm_start.begin(), state.warm_start.end(), item) == state.warm_start.end();
}

std::pair<double, EpisodeState> Environment::step(const EpisodeState& state, int item) const {
  if (item < 0 || item >= num_items()) throw std::out_of_range("item " + std::to_string(item) + " out of range");
  if (!available(state, item))
    throw std::invalid_argument("item " + std::to_string(item) + " already consumed by user " + std::to_string(state.user));
  EpisodeState next = state;
  next.history.push_back(item);
  next.round = state.round + 1;
  return {matrix_(state.user, item), std::move(next)};
}

// ---- policies -----------------------------------------------------------------------

namespace {

std::vector<int> available_items(const EpisodeState& state, const Environment& env) {
  std::vector<int> out;
  for (int i = 0; i < env.num_items(); ++i)
    if (env.available(state, i)) out.push_back(i);
  if (out.empty()) throw std::runtime_error("no items left to recommend for user " + std::to_string(state.user));
  return out;
}

}  // namespace

int RandomPolicy::choose(const EpisodeState& state, const Environment& env, Rng& rng) {
  const auto items = available_items(state, env);
  return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

int OraclePolicy::choose(const EpisodeState& state, const Environment& env, Rng&) {
  const auto items = available_items(state, env);
  int best = items.front();
  for (int i : items)
    if (env.matrix()(state.user, i) > env.matrix()(state.user, best)) best = i;
  return best;
}

ModelPolicy::ModelPolicy(const RecommenderModel& model, ScoreSource source) : model_(model), source_(source) {}

int ModelPolicy::choose(const EpisodeState& state, const Environment& env, Rng&) {
  std::vector<int> seen = state.warm_start;
  seen.insert(seen.end(), state.history.begin(), state.history.end());
  const auto& enc = model_.encoder();
  const auto seq = window(seen, seen.size(), enc.config().max_len, enc.catalog().pad_id());
  const Matrix s = enc.infer(SequenceBatch::single(seq));
  const LinearHead& head = source_ == ScoreSource::supervised ? model_.supervised
                           : source_ == ScoreSource::q_a      ? model_.q.a
                                                              : model_.q.b;
  const Matrix scores = head.infer(s);
  const auto items = available_items(state, env);
  int best = items.front();
  for (int i : items)
    if (scores(0, i) > scores(0, best)) best = i;
  return best;
}

// ---- rollouts -------------------------------------------------------------------------

RolloutResult run_rounds(const Environment& env, Policy& policy, int rounds, double gamma, Rng& rng) {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  RolloutResult r;
  r.rewards = Matrix::Zero(env.num_users(), rounds);
  r.returns = Vector::Zero(env.num_users());
  for (int u = 0; u < env.num_users(); ++u) {
    EpisodeState s = env.reset(u);
    double discount = 1.0;
    for (int t = 0; t < rounds; ++t) {
      auto [reward, next] = env.step(s, policy.choose(s, env, rng));
      r.rewards(u, t) = reward;
      r.returns(u) += discount * reward;
      discount *= gamma;
      s = std::move(next);
    }
  }
  const Vector mean = r.rewards.colwise().mean().transpose();
  double acc = 0.0;
  double discount = 1.0;
  for (int t = 0; t < rounds; ++t) {
    acc += discount * mean(t);
    discount *= gamma;
    r.cumulative.push_back(acc);
  }
  return r;
}

nlohmann::json CurveReport::to_json() const {
  return {{"policy", policy}, {"rounds", rounds}, {"gamma", gamma}, {"curve", curve}, {"repetitions", repetitions}};
}

CurveReport evaluate_policy(Policy& policy, const Environment& env, int rounds, int repetitions, double gamma,
                            std::uint64_t seed) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  CurveReport rep;
  rep.policy = policy.name();
  rep.rounds = rounds;
  rep.gamma = gamma;
  rep.curve.assign(static_cast<std::size_t>(rounds), 0.0);
  for (int k = 0; k < repetitions; ++k) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(k)};
    Rng rng(seq);
    const RolloutResult r = run_rounds(env, policy, rounds, gamma, rng);
    rep.repetitions.push_back(r.cumulative);
    for (int t = 0; t < rounds; ++t) rep.curve[static_cast<std::size_t>(t)] += r.cumulative[static_cast<std::size_t>(t)];
  }
  for (double& v : rep.curve) v /= static_cast<double>(repetitions);
  return rep;
}

CurveReport evaluate_policy(const RecommenderModel& model, const Environment& env, int rounds, int repetitions,
                            double gamma, std::uint64_t seed, ScoreSource source) {
  if (model.catalog().num_items != env.num_items())
    throw std::invalid_argument("model catalogue has " + std::to_string(model.catalog().num_items) +
                                " items but the environment has " + std::to_string(env.num_items()));
  ModelPolicy policy(model, source);
  return evaluate_policy(policy, env, rounds, repetitions, gamma, seed);
}

double brute_force_optimum(const DenseRewardMatrix& m, int user, int rounds, double gamma,
                           const std::vector<int>& consumed) {
  std::vector<char> used(static_cast<std::size_t>(m.num_items()), 0);
  for (int i : consumed) used[static_cast<std::size_t>(i)] = 1;
  double best = -1.0;
  // Depth-first over repeat-free sequences.
  auto search = [&](auto&& self, int depth, double value, double discount) -> void {
    if (depth == rounds) {
      best = std::max(best, value);
      return;
    }
    for (int i = 0; i < m.num_items(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      used[static_cast<std::size_t>(i)] = 1;
      self(self, depth + 1, value + discount * m(user, i), discount * gamma);
      used[static_cast<std::size_t>(i)] = 0;
    }
  };
  search(search, 0, 0.0, 1.0);
  if (best < 0.0) throw std::invalid_argument("brute_force_optimum: not enough items for the requested rounds");
  return best;
}

}  // namespace csarec
