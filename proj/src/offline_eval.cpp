// SPDX-License-Identifier: Apache-2.0
#include "csarec/offline_eval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace csarec {

namespace {

const std::vector<int> kDefaultKs{5, 10, 20};

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (int k : ks) {
    j["hr@" + std::to_string(k)] = hr.at(k);
    j["ndcg@" + std::to_string(k)] = ndcg.at(k);
  }
  j["n"] = num_eval_events;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.ks.clear();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key.rfind("hr@", 0) == 0) {
      const int k = std::stoi(key.substr(3));
      r.ks.push_back(k);
      r.hr[k] = it.value().get<double>();
    } else if (key.rfind("ndcg@", 0) == 0) {
      r.ndcg[std::stoi(key.substr(5))] = it.value().get<double>();
    }
  }
  std::sort(r.ks.begin(), r.ks.end());
  r.num_eval_events = j.at("n").get<std::size_t>();
  return r;
}

RankCounts count_rank(const Vector& scores, int target) {
  if (target < 0 || target >= scores.size())
    throw std::out_of_range("rank target " + std::to_string(target) + " outside [0, " + std::to_string(scores.size()) +
                            ")");
  const double t = scores(target);
  RankCounts c;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (scores(i) > t)
      ++c.greater;
    else if (scores(i) == t)
      ++c.ties;
  }
  --c.ties;  // the target itself
  return c;
}

int rank_of_target(const Vector& scores, int target, Rng& tie_rng) {
  const RankCounts c = count_rank(scores, target);
  if (c.ties == 0) return 1 + c.greater;
  std::uniform_int_distribution<int> u(0, c.ties);
  return 1 + c.greater + u(tie_rng);
}

MetricReport hr_ndcg(std::span<const int> ranks, std::span<const int> ks) {
  if (ranks.empty()) throw EmptyEvaluation("no evaluation events");
  if (ks.empty()) ks = kDefaultKs;
  MetricReport r;
  r.ks.assign(ks.begin(), ks.end());
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  // Histogram of ranks, then sums in rank order: the result does not depend on event order.
  std::map<int, std::size_t> hist;
  for (int rank : ranks) {
    if (rank < 1) throw std::invalid_argument("ranks must be >= 1, got " + std::to_string(rank));
    ++hist[rank];
  }
  const double n = static_cast<double>(ranks.size());
  for (int k : r.ks) {
    if (k < 1) throw std::invalid_argument("cutoff k must be >= 1");
    std::size_t hits = 0;
    double gain = 0.0;
    for (const auto& [rank, count] : hist) {
      if (rank > k) break;
      hits += count;
      gain += static_cast<double>(count) / std::log2(static_cast<double>(rank) + 1.0);
    }
    r.hr[k] = static_cast<double>(hits) / n;
    r.ndcg[k] = gain / n;
  }
  r.num_eval_events = ranks.size();
  return r;
}

std::string to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::supervised:
      return "supervised";
    case ScoreSource::q_a:
      return "q_a";
    case ScoreSource::q_b:
      return "q_b";
  }
  return "supervised";
}

ScoreSource score_source_from_string(const std::string& s) {
  if (s == "supervised") return ScoreSource::supervised;
  if (s == "q_a") return ScoreSource::q_a;
  if (s == "q_b") return ScoreSource::q_b;
  throw std::invalid_argument("unknown score source '" + s + "' (expected supervised, q_a or q_b)");
}

std::vector<int> event_ranks(const RecommenderModel& model, std::span<const ReplayTuple> tuples,
                             const EvalOptions& options) {
  std::vector<const ReplayTuple*> kept;
  for (const auto& t : tuples)
    if (!options.filter || t.feedback == *options.filter) kept.push_back(&t);
  std::vector<int> ranks(kept.size());
  if (kept.empty()) return ranks;

  const LinearHead& head = options.source == ScoreSource::supervised ? model.supervised
                           : options.source == ScoreSource::q_a      ? model.q.a
                                                                     : model.q.b;
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  const std::size_t num_chunks = (kept.size() + batch - 1) / batch;

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * batch;
    const std::size_t end = std::min(kept.size(), begin + batch);
    SequenceBatch seqs;
    seqs.length = static_cast<int>(kept[begin]->state_seq.size());
    for (std::size_t i = begin; i < end; ++i)
      seqs.ids.insert(seqs.ids.end(), kept[i]->state_seq.begin(), kept[i]->state_seq.end());
    const Matrix scores = head.infer(model.encoder().infer(seqs));
    for (std::size_t i = begin; i < end; ++i) {
      const Vector row = scores.row(static_cast<Eigen::Index>(i - begin)).transpose();
      const RankCounts rc = count_rank(row, kept[i]->action);
      int rank = 1 + rc.greater;
      if (rc.ties > 0) {
        std::seed_seq seq{options.seed, static_cast<std::uint64_t>(i)};
        Rng rng(seq);
        rank += std::uniform_int_distribution<int>(0, rc.ties)(rng);
      }
      ranks[i] = rank;
    }
  };

  const unsigned workers = options.deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency());
  if (workers <= 1 || num_chunks <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < num_chunks; c += workers) run_chunk(c);
      });
    for (auto& t : pool) t.join();
  }
  return ranks;
}

MetricReport evaluate(const RecommenderModel& model, std::span<const ReplayTuple> tuples, const EvalOptions& options) {
  const std::vector<int> ranks = event_ranks(model, tuples, options);
  if (ranks.empty())
    throw EmptyEvaluation(options.filter ? "no " + to_string(*options.filter) + " events to evaluate"
                                         : std::string("no events to evaluate"));
  return hr_ndcg(ranks, options.ks);
}

}  // namespace csarec
