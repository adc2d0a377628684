// SPDX-License-Identifier: Apache-2.0
#include "csarec/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace csarec {

std::string to_string(Feedback f) { return f == Feedback::purchase ? "purchase" : "click"; }

Feedback feedback_from_string(const std::string& s) {
  if (s == "click") return Feedback::click;
  if (s == "purchase") return Feedback::purchase;
  throw std::invalid_argument("unknown feedback '" + s + "'");
}

FeedbackLabels FeedbackLabels::retail_rocket() {
  FeedbackLabels l;
  l.labels = {{"view", Feedback::click}, {"addtocart", Feedback::purchase}};
  return l;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return c >= '0' && c <= '9'; });
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

bool session_id_less(const std::string& a, const std::string& b) {
  const bool da = all_digits(a), db = all_digits(b);
  if (da && db) {
    auto strip = [](const std::string& s) {
      const std::size_t nz = s.find_first_not_of('0');
      return nz == std::string::npos ? std::string("0") : s.substr(nz);
    };
    const std::string sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
    return a < b;
  }
  if (da != db) return da;  // numeric ids first
  return a < b;
}

ParsedSessions parse_sessions(std::istream& in, const FeedbackLabels& labels) {
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line)) throw ParseError(row, "missing header line");
  strip_cr(line);
  const std::vector<std::string> header = split_tabs(line);
  const char* required[] = {"session_id", "item_id", "feedback", "timestamp"};
  std::size_t col[4];
  for (int i = 0; i < 4; ++i) {
    const auto it = std::find(header.begin(), header.end(), required[i]);
    if (it == header.end()) throw ParseError(row, std::string("header lacks column '") + required[i] + "'");
    col[i] = static_cast<std::size_t>(it - header.begin());
  }
  const std::size_t min_fields = *std::max_element(col, col + 4) + 1;

  struct RawEvent {
    std::string item;
    Feedback feedback;
    std::int64_t timestamp;
  };
  std::unordered_map<std::string, std::vector<RawEvent>> grouped;
  std::vector<std::string> order;

  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() < min_fields)
      throw ParseError(row, "expected at least " + std::to_string(min_fields) + " fields, got " +
                                std::to_string(f.size()));
    const std::string& sid = f[col[0]];
    const std::string& item = f[col[1]];
    const std::string& label = f[col[2]];
    if (sid.empty()) throw ParseError(row, "empty session_id");
    if (item.empty()) throw ParseError(row, "empty item_id");
    const auto lab = labels.labels.find(label);
    if (lab == labels.labels.end()) throw ParseError(row, "unknown feedback label '" + label + "'");
    std::int64_t ts = 0;
    if (!parse_number(f[col[3]], ts)) throw ParseError(row, "malformed timestamp '" + f[col[3]] + "'");
    auto [it, inserted] = grouped.try_emplace(sid);
    if (inserted) order.push_back(sid);
    it->second.push_back({item, lab->second, ts});
  }

  std::sort(order.begin(), order.end(), session_id_less);

  ParsedSessions out;
  std::vector<std::pair<std::string, std::vector<RawEvent>>> kept;
  for (const std::string& sid : order) {
    std::vector<RawEvent>& ev = grouped[sid];
    if (ev.size() < kMinSessionLength) {
      ++out.dropped_sessions;
      continue;
    }
    std::stable_sort(ev.begin(), ev.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
    kept.emplace_back(sid, std::move(ev));
  }

  // Dense re-indexing over surviving items, ordered like session ids so that
  // already-dense corpora keep their ids.
  std::vector<std::string> tokens;
  for (const auto& [sid, ev] : kept)
    for (const RawEvent& e : ev) tokens.push_back(e.item);
  std::sort(tokens.begin(), tokens.end(), session_id_less);
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  std::unordered_map<std::string, int> dense;
  for (std::size_t i = 0; i < tokens.size(); ++i) dense.emplace(tokens[i], static_cast<int>(i));

  for (auto& [sid, ev] : kept) {
    Session s;
    s.session_id = sid;
    for (const RawEvent& e : ev) s.interactions.push_back({dense.at(e.item), e.feedback, e.timestamp});
    out.sessions.push_back(std::move(s));
  }
  out.catalog.num_items = static_cast<int>(tokens.size());
  out.item_tokens = std::move(tokens);
  return out;
}

ParsedSessions parse_sessions_file(const std::string& path, const FeedbackLabels& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_sessions(in, labels);
}

void write_sessions(std::ostream& out, const std::vector<Session>& sessions) {
  out << "session_id\titem_id\tfeedback\ttimestamp\n";
  for (const Session& s : sessions)
    for (const Interaction& i : s.interactions)
      out << s.session_id << '\t' << i.item_id << '\t' << to_string(i.feedback) << '\t' << i.timestamp << '\n';
}

std::vector<int> window(const std::vector<int>& items, std::size_t end, int length, int pad_id) {
  std::vector<int> w(static_cast<std::size_t>(length), pad_id);
  const std::size_t take = std::min<std::size_t>(end, static_cast<std::size_t>(length));
  std::copy(items.begin() + static_cast<std::ptrdiff_t>(end - take), items.begin() + static_cast<std::ptrdiff_t>(end),
            w.end() - static_cast<std::ptrdiff_t>(take));
  return w;
}

int true_length(const std::vector<int>& seq, int pad_id) {
  return static_cast<int>(std::count_if(seq.begin(), seq.end(), [pad_id](int id) { return id != pad_id; }));
}

std::vector<ReplayTuple> build_replay_tuples(const Session& session, int length, const RewardMap& rewards,
                                             const CatalogInfo& catalog) {
  if (length < 1) throw std::invalid_argument("build_replay_tuples: length must be >= 1");
  if (session.size() < 2) throw std::invalid_argument("build_replay_tuples: session needs at least two interactions");
  std::vector<int> items;
  items.reserve(session.size());
  for (const Interaction& i : session.interactions) {
    if (i.item_id < 0 || i.item_id >= catalog.num_items)
      throw std::out_of_range("build_replay_tuples: item id " + std::to_string(i.item_id) + " outside catalogue");
    items.push_back(i.item_id);
  }
  std::vector<ReplayTuple> out;
  out.reserve(items.size() - 1);
  for (std::size_t t = 1; t < items.size(); ++t) {
    ReplayTuple r;
    r.state_seq = window(items, t, length, catalog.pad_id());
    r.action = items[t];
    r.feedback = session.interactions[t].feedback;
    r.reward = rewards(r.feedback);
    r.next_seq = window(items, t + 1, length, catalog.pad_id());
    r.terminal = (t + 1 == items.size());
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ReplayTuple> build_replay_tuples(const std::vector<Session>& sessions, int length,
                                             const RewardMap& rewards, const CatalogInfo& catalog) {
  std::vector<ReplayTuple> out;
  for (const Session& s : sessions) {
    auto t = build_replay_tuples(s, length, rewards, catalog);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

SessionSplit split_sessions(const std::vector<Session>& sessions, const SplitRatios& ratios, std::uint64_t seed) {
  if (sessions.size() < 3) throw std::invalid_argument("split_sessions: need at least 3 sessions");
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
    throw std::invalid_argument("split_sessions: ratios must be positive");
  const double total = ratios.train + ratios.validation + ratios.test;
  const double n = static_cast<double>(sessions.size());
  auto count = [&](double r) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * r / total))); };
  const std::size_t n_val = count(ratios.validation);
  const std::size_t n_test = count(ratios.test);
  if (n_val + n_test >= sessions.size()) throw std::invalid_argument("split_sessions: training split would be empty");

  std::vector<std::size_t> idx(sessions.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  SessionSplit split;
  const std::size_t n_train = sessions.size() - n_val - n_test;
  auto take = [&](std::size_t from, std::size_t count_, std::vector<Session>& dst) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                  idx.begin() + static_cast<std::ptrdiff_t>(from + count_));
    std::sort(part.begin(), part.end());  // keep corpus order inside a split
    for (std::size_t i : part) dst.push_back(sessions[i]);
  };
  take(0, n_train, split.train);
  take(n_train, n_val, split.validation);
  take(n_train + n_val, n_test, split.test);
  return split;
}

void write_split_manifest(std::ostream& out, const SessionSplit& split, std::uint64_t seed) {
  out << "# csarec-split v1\n";
  out << "# seed " << seed << '\n';
  for (const Session& s : split.train) out << "train\t" << s.session_id << '\n';
  for (const Session& s : split.validation) out << "validation\t" << s.session_id << '\n';
  for (const Session& s : split.test) out << "test\t" << s.session_id << '\n';
}

SessionSplit read_split_manifest(std::istream& in, const std::vector<Session>& sessions) {
  std::unordered_map<std::string, const Session*> by_id;
  for (const Session& s : sessions) by_id.emplace(s.session_id, &s);
  SessionSplit split;
  std::string line;
  std::size_t row = 0;
  bool tagged = false;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == "# csarec-split v1") tagged = true;
      continue;
    }
    if (!tagged) throw ParseError(row, "split manifest lacks the 'csarec-split v1' tag");
    const auto f = split_tabs(line);
    if (f.size() != 2) throw ParseError(row, "expected '<split>\\t<session_id>'");
    const auto it = by_id.find(f[1]);
    if (it == by_id.end()) throw ParseError(row, "unknown session '" + f[1] + "'");
    if (f[0] == "train") {
      split.train.push_back(*it->second);
    } else if (f[0] == "validation") {
      split.validation.push_back(*it->second);
    } else if (f[0] == "test") {
      split.test.push_back(*it->second);
    } else {
      throw ParseError(row, "unknown split '" + f[0] + "'");
    }
  }
  if (!tagged) throw ParseError(row, "split manifest lacks the 'csarec-split v1' tag");
  return split;
}

void write_tuple_cache(std::ostream& out, const std::vector<ReplayTuple>& tuples, const CatalogInfo& catalog,
                       int length) {
  out << "# " << kTupleCacheTag << '\n';
  out << "# num_items " << catalog.num_items << " length " << length << " count " << tuples.size() << '\n';
  std::ostringstream buf;
  buf.precision(17);
  auto write_seq = [&](const std::vector<int>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) buf << (i ? "," : "") << s[i];
  };
  for (const ReplayTuple& t : tuples) {
    write_seq(t.state_seq);
    buf << '\t' << t.action << '\t' << t.reward << '\t';
    write_seq(t.next_seq);
    buf << '\t' << (t.terminal ? 1 : 0) << '\t' << to_string(t.feedback) << '\n';
  }
  out << buf.str();
}

TupleCache read_tuple_cache(std::istream& in) {
  TupleCache cache;
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line) || line != std::string("# ") + kTupleCacheTag)
    throw ParseError(row, std::string("tuple cache lacks the '") + kTupleCacheTag + "' tag");
  ++row;
  if (!std::getline(in, line)) throw ParseError(row, "tuple cache lacks its shape line");
  {
    std::istringstream hs(line);
    std::string hash, k1, k2, k3;
    std::size_t count = 0;
    if (!(hs >> hash >> k1 >> cache.catalog.num_items >> k2 >> cache.length >> k3 >> count) || k1 != "num_items" ||
        k2 != "length" || k3 != "count")
      throw ParseError(row, "malformed tuple cache shape line");
    cache.tuples.reserve(count);
  }
  auto parse_seq = [&](const std::string& s) {
    std::vector<int> seq;
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t pos = s.find(',', start);
      int v = 0;
      if (!parse_number(s.substr(start, pos - start), v)) throw ParseError(row, "malformed sequence '" + s + "'");
      seq.push_back(v);
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (static_cast<int>(seq.size()) != cache.length) throw ParseError(row, "sequence length mismatch");
    return seq;
  };
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) throw ParseError(row, "expected 6 fields");
    ReplayTuple t;
    t.state_seq = parse_seq(f[0]);
    if (!parse_number(f[1], t.action)) throw ParseError(row, "malformed action");
    try {
      std::size_t used = 0;
      t.reward = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(row, "malformed reward '" + f[2] + "'");
    }
    t.next_seq = parse_seq(f[3]);
    if (f[4] != "0" && f[4] != "1") throw ParseError(row, "malformed terminal flag");
    t.terminal = f[4] == "1";
    try {
      t.feedback = feedback_from_string(f[5]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(row, e.what());
    }
    cache.tuples.push_back(std::move(t));
  }
  return cache;
}

// ---- synthetic --------------------------------------------------------------

namespace {

void check_stochastic(const Matrix& m) {
  if (m.rows() == 0 || m.rows() != m.cols()) throw std::invalid_argument("transition matrix must be square and non-empty");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0.0).any() || !m.row(i).allFinite())
      throw std::invalid_argument("transition matrix row " + std::to_string(i) + " has a negative or non-finite entry");
    if (std::abs(m.row(i).sum() - 1.0) > 1e-9)
      throw std::invalid_argument("transition matrix row " + std::to_string(i) + " does not sum to 1");
  }
}

}  // namespace

std::vector<Session> generate_synthetic(const SyntheticSpec& spec) {
  check_stochastic(spec.transitions);
  const int n = static_cast<int>(spec.transitions.rows());
  if (spec.purchase_prob.size() != 1 && spec.purchase_prob.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("purchase_prob must hold one value or one per item");
  for (double p : spec.purchase_prob)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("purchase_prob must lie in [0, 1]");
  if (spec.min_length < 1 || spec.max_length < spec.min_length)
    throw std::invalid_argument("synthetic session length range is invalid");
  if (!spec.initial.empty() && spec.initial.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("initial distribution size must match the catalogue");

  Rng rng(spec.seed);
  std::vector<std::discrete_distribution<int>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const RowVector r = spec.transitions.row(i);
    rows.emplace_back(r.data(), r.data() + r.size());
  }
  const std::vector<double> init = spec.initial.empty() ? std::vector<double>(static_cast<std::size_t>(n), 1.0) : spec.initial;
  std::discrete_distribution<int> start(init.begin(), init.end());
  std::uniform_int_distribution<int> length(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Session> out;
  out.reserve(static_cast<std::size_t>(spec.num_sessions));
  for (int s = 0; s < spec.num_sessions; ++s) {
    Session sess;
    sess.session_id = std::to_string(s);
    const int len = length(rng);
    int item = start(rng);
    for (int t = 0; t < len; ++t) {
      if (t > 0) item = rows[static_cast<std::size_t>(item)](rng);
      const double p = spec.purchase_prob.size() == 1 ? spec.purchase_prob[0]
                                                       : spec.purchase_prob[static_cast<std::size_t>(item)];
      const Feedback fb = unit(rng) < p ? Feedback::purchase : Feedback::click;
      sess.interactions.push_back({item, fb, t});
    }
    out.push_back(std::move(sess));
  }
  return out;
}

Matrix uniform_transitions(int num_items) {
  return Matrix::Constant(num_items, num_items, 1.0 / static_cast<double>(num_items));
}

Matrix identity_transitions(int num_items) { return Matrix::Identity(num_items, num_items); }

int cluster_of(int item, int num_items, int num_clusters) {
  return static_cast<int>(static_cast<std::int64_t>(item) * num_clusters / num_items);
}

Matrix cluster_transitions(const ClusterChainSpec& spec) {
  const int n = spec.num_items;
  const int c = spec.num_clusters;
  if (n <= 0 || c <= 0 || c > n) throw std::invalid_argument("cluster_transitions: bad sizes");
  if (!(spec.leak >= 0.0 && spec.leak <= 1.0)) throw std::invalid_argument("cluster_transitions: leak must be in [0,1]");
  if (!(spec.favoured_mass >= 0.0 && spec.favoured_mass <= 1.0))
    throw std::invalid_argument("cluster_transitions: favoured_mass must be in [0,1]");
  if (c == 1 && spec.leak > 0.0) throw std::invalid_argument("cluster_transitions: leak needs more than one cluster");

  Rng rng(spec.seed);
  std::gamma_distribution<double> weight(1.0, 1.0);
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const int ci = cluster_of(i, n, c);
    std::vector<int> own, other;
    for (int j = 0; j < n; ++j) (cluster_of(j, n, c) == ci ? own : other).push_back(j);
    const double inside = 1.0 - (c > 1 ? spec.leak : 0.0);
    for (int j : other) m(i, j) = spec.leak / static_cast<double>(other.size());

    std::vector<int> cand = own;
    std::shuffle(cand.begin(), cand.end(), rng);
    const int fav = std::min<int>(spec.favoured, static_cast<int>(cand.size()));
    std::vector<double> w(static_cast<std::size_t>(fav));
    double wsum = 0.0;
    for (double& x : w) wsum += (x = weight(rng));
    const double spread = fav == static_cast<int>(own.size()) ? 0.0 : 1.0 - spec.favoured_mass;
    const double fav_mass = 1.0 - spread;
    for (int j : own) m(i, j) = inside * spread / static_cast<double>(own.size());
    for (int k = 0; k < fav; ++k) m(i, cand[static_cast<std::size_t>(k)]) += inside * fav_mass * w[static_cast<std::size_t>(k)] / wsum;
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

std::vector<double> item_purchase_probs(int num_items, double lo, double hi, std::uint64_t seed) {
  if (!(lo >= 0.0 && hi >= lo && hi <= 1.0)) throw std::invalid_argument("purchase probabilities need 0 <= lo <= hi <= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(static_cast<std::size_t>(num_items));
  for (double& p : out) p = lo == hi ? lo : u(rng);
  return out;
}

std::vector<Session> generate_cluster_corpus(const ClusterCorpusSpec& spec) {
  ClusterChainSpec chain = spec.chain;
  chain.seed = spec.seed;
  SyntheticSpec s;
  s.num_sessions = spec.num_sessions;
  s.seed = spec.seed + 1;
  s.transitions = cluster_transitions(chain);
  s.purchase_prob = item_purchase_probs(chain.num_items, spec.purchase_min, spec.purchase_max, spec.seed + 2);
  s.min_length = spec.min_length;
  s.max_length = spec.max_length;
  return generate_synthetic(s);
}

}  // namespace csarec
