// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csarec {

using Rng = std::mt19937_64;

enum class Feedback { click, purchase };

std::string to_string(Feedback f);
Feedback feedback_from_string(const std::string& s);

struct Interaction {
  int item_id = 0;
  Feedback feedback = Feedback::click;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct Session {
  std::string session_id;
  std::vector<Interaction> interactions;

  std::size_t size() const { return interactions.size(); }
  bool operator==(const Session&) const = default;
};

// Item catalogue with two reserved ids at the tail: pad and mask.
struct CatalogInfo {
  int num_items = 0;

  int pad_id() const { return num_items; }
  int mask_id() const { return num_items + 1; }
  // Rows in the embedding table (real items plus pad and mask).
  int vocab_size() const { return num_items + 2; }
  bool operator==(const CatalogInfo&) const = default;
};

struct ReplayTuple {
  std::vector<int> state_seq;
  int action = 0;
  double reward = 0.0;
  std::vector<int> next_seq;
  bool terminal = false;
  Feedback feedback = Feedback::click;

  bool operator==(const ReplayTuple&) const = default;
};

struct RewardMap {
  double click = 0.2;
  double purchase = 1.0;

  double operator()(Feedback f) const { return f == Feedback::purchase ? purchase : click; }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Raw feedback label -> Feedback. Defaults to {"click", "purchase"}.
struct FeedbackLabels {
  std::map<std::string, Feedback> labels{{"click", Feedback::click}, {"purchase", Feedback::purchase}};

  // Views count as clicks and add-to-cart as purchases.
  static FeedbackLabels retail_rocket();
};

struct ParsedSessions {
  std::vector<Session> sessions;
  CatalogInfo catalog;
  // Dense id -> raw item token from the input file.
  std::vector<std::string> item_tokens;
  std::size_t dropped_sessions = 0;
};

inline constexpr std::size_t kMinSessionLength = 3;

// Parses a tab-separated file with a header naming session_id, item_id,
// feedback and timestamp (any column order, extra columns ignored). Sessions
// are ordered by id, interactions by timestamp (stable), sessions shorter than
// three are dropped and surviving item tokens are re-indexed densely.
ParsedSessions parse_sessions(std::istream& in, const FeedbackLabels& labels = {});
ParsedSessions parse_sessions_file(const std::string& path, const FeedbackLabels& labels = {});

// Writes sessions in the same format parse_sessions reads.
void write_sessions(std::ostream& out, const std::vector<Session>& sessions);

// Ordering used for session ids: all-digit ids compare numerically, otherwise lexicographically.
bool session_id_less(const std::string& a, const std::string& b);

// Last `length` items of the prefix ending at `end` (exclusive), left-padded.
std::vector<int> window(const std::vector<int>& items, std::size_t end, int length, int pad_id);

// Number of non-pad entries in a window.
int true_length(const std::vector<int>& seq, int pad_id);

std::vector<ReplayTuple> build_replay_tuples(const Session& session, int length, const RewardMap& rewards,
                                             const CatalogInfo& catalog);
std::vector<ReplayTuple> build_replay_tuples(const std::vector<Session>& sessions, int length,
                                             const RewardMap& rewards, const CatalogInfo& catalog);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct SessionSplit {
  std::vector<Session> train;
  std::vector<Session> validation;
  std::vector<Session> test;
};

SessionSplit split_sessions(const std::vector<Session>& sessions, const SplitRatios& ratios, std::uint64_t seed);

void write_split_manifest(std::ostream& out, const SessionSplit& split, std::uint64_t seed);
// Rebuilds a split from a manifest and the full session list.
SessionSplit read_split_manifest(std::istream& in, const std::vector<Session>& sessions);

inline constexpr const char* kTupleCacheTag = "csarec-tuples v1";

void write_tuple_cache(std::ostream& out, const std::vector<ReplayTuple>& tuples, const CatalogInfo& catalog,
                       int length);
struct TupleCache {
  CatalogInfo catalog;
  int length = 0;
  std::vector<ReplayTuple> tuples;
};
TupleCache read_tuple_cache(std::istream& in);

// ---- synthetic corpora -----------------------------------------------------

struct SyntheticSpec {
  int num_sessions = 1000;
  std::uint64_t seed = 0;
  // Row-stochastic next-item matrix; its size fixes the catalogue.
  Matrix transitions;
  // Either one probability for every item or one per item.
  std::vector<double> purchase_prob{0.1};
  int min_length = 3;
  int max_length = 12;
  // Start-item distribution; uniform when empty.
  std::vector<double> initial;
};

std::vector<Session> generate_synthetic(const SyntheticSpec& spec);

Matrix uniform_transitions(int num_items);
Matrix identity_transitions(int num_items);

struct ClusterChainSpec {
  int num_items = 50;
  int num_clusters = 2;
  // Total probability of jumping to another cluster.
  double leak = 0.05;
  // Each item prefers this many in-cluster successors...
  int favoured = 3;
  // ...which share this much of the in-cluster mass.
  double favoured_mass = 0.8;
  std::uint64_t seed = 0;
};

// Block-structured transitions: contiguous clusters, `leak` mass spread
// uniformly over items of other clusters.
Matrix cluster_transitions(const ClusterChainSpec& spec);
int cluster_of(int item, int num_items, int num_clusters);

// Item-specific purchase probabilities, uniform in [lo, hi].
std::vector<double> item_purchase_probs(int num_items, double lo, double hi, std::uint64_t seed);

// Two-cluster benchmark corpus: cluster transitions plus item-specific
// purchase probabilities, all derived from one seed.
struct ClusterCorpusSpec {
  ClusterChainSpec chain;
  int num_sessions = 10000;
  double purchase_min = 0.05;
  double purchase_max = 0.5;
  int min_length = 3;
  int max_length = 12;
  std::uint64_t seed = 0;
};

std::vector<Session> generate_cluster_corpus(const ClusterCorpusSpec& spec);

}  // namespace csarec
