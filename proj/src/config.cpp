// SPDX-License-Identifier: Apache-2.0
#include "csarec/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace csarec {

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <class T>
T parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw std::invalid_argument("'" + s + "' is not a valid " + (std::is_floating_point_v<T> ? "number" : "integer"));
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw std::invalid_argument("'" + s + "' is not finite");
  return v;
}

bool parse_bool(const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("'" + s + "' is not a boolean (true/false)");
}

std::vector<int> parse_int_list(const std::string& raw) {
  std::vector<int> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(item));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list of integers");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::string& v) { return v; }
std::string fmt(const std::vector<int>& v) {
  std::vector<std::string> parts;
  for (int x : v) parts.push_back(std::to_string(x));
  return join(parts, ",");
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Field typed(const std::string& section, const std::string& key, Access access) {
  return Field{section, key,
               [access](RunConfig& c, const std::string& v) {
                 if constexpr (std::is_same_v<T, bool>)
                   access(c) = parse_bool(v);
                 else if constexpr (std::is_same_v<T, std::string>)
                   access(c) = trim(v);
                 else if constexpr (std::is_same_v<T, std::vector<int>>)
                   access(c) = parse_int_list(v);
                 else
                   access(c) = parse_number<T>(v);
               },
               [access](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); }};
}

template <class E, class Access>
Field enumerated(const std::string& section, const std::string& key, Access access, E (*parse)(const std::string&)) {
  return Field{section, key, [access, parse](RunConfig& c, const std::string& v) { access(c) = parse(trim(v)); },
               [access](const RunConfig& c) { return to_string(access(const_cast<RunConfig&>(c))); }};
}

#define CSAREC_REF(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      typed<std::string>("data", "input", CSAREC_REF(c.data.input)),
      typed<std::string>("data", "prepared", CSAREC_REF(c.data.prepared)),
      typed<std::string>("data", "labels", CSAREC_REF(c.data.labels)),
      typed<double>("data", "click_reward", CSAREC_REF(c.data.rewards.click)),
      typed<double>("data", "purchase_reward", CSAREC_REF(c.data.rewards.purchase)),
      typed<double>("data", "train_ratio", CSAREC_REF(c.data.split.train)),
      typed<double>("data", "validation_ratio", CSAREC_REF(c.data.split.validation)),
      typed<double>("data", "test_ratio", CSAREC_REF(c.data.split.test)),
      typed<std::uint64_t>("data", "split_seed", CSAREC_REF(c.data.split_seed)),

      typed<int>("synthetic", "sessions", CSAREC_REF(c.synthetic.sessions)),
      typed<int>("synthetic", "items", CSAREC_REF(c.synthetic.items)),
      typed<int>("synthetic", "clusters", CSAREC_REF(c.synthetic.clusters)),
      typed<double>("synthetic", "leak", CSAREC_REF(c.synthetic.leak)),
      typed<int>("synthetic", "favoured", CSAREC_REF(c.synthetic.favoured)),
      typed<double>("synthetic", "favoured_mass", CSAREC_REF(c.synthetic.favoured_mass)),
      typed<double>("synthetic", "purchase_min", CSAREC_REF(c.synthetic.purchase_min)),
      typed<double>("synthetic", "purchase_max", CSAREC_REF(c.synthetic.purchase_max)),
      typed<int>("synthetic", "min_length", CSAREC_REF(c.synthetic.min_length)),
      typed<int>("synthetic", "max_length", CSAREC_REF(c.synthetic.max_length)),
      typed<std::uint64_t>("synthetic", "seed", CSAREC_REF(c.synthetic.seed)),

      enumerated("encoder", "kind", CSAREC_REF(c.encoder.kind), &encoder_kind_from_string),
      typed<int>("encoder", "embedding_dim", CSAREC_REF(c.encoder.embedding_dim)),
      typed<int>("encoder", "max_len", CSAREC_REF(c.encoder.max_len)),
      typed<int>("encoder", "attention_heads", CSAREC_REF(c.encoder.attention_heads)),
      typed<double>("encoder", "dropout", CSAREC_REF(c.encoder.dropout)),

      enumerated("heads", "activation", CSAREC_REF(c.head_activation), &activation_from_string),

      typed<double>("train", "w_s", CSAREC_REF(c.train.weights.w_s)),
      typed<double>("train", "w_q", CSAREC_REF(c.train.weights.w_q)),
      typed<double>("train", "w_a", CSAREC_REF(c.train.weights.w_a)),
      typed<double>("train", "w_c", CSAREC_REF(c.train.weights.w_c)),
      typed<double>("train", "gamma", CSAREC_REF(c.train.gamma)),
      enumerated("train", "contrastive_mode", CSAREC_REF(c.train.contrastive_mode), &contrastive_mode_from_string),
      typed<int>("train", "batch_size", CSAREC_REF(c.train.batch_size)),
      typed<double>("train", "learning_rate", CSAREC_REF(c.train.learning_rate)),
      typed<int>("train", "max_epochs", CSAREC_REF(c.train.max_epochs)),
      typed<int>("train", "eval_every", CSAREC_REF(c.train.eval_every)),
      typed<std::uint64_t>("train", "seed", CSAREC_REF(c.train.seed)),
      typed<bool>("train", "deterministic", CSAREC_REF(c.train.deterministic)),
      typed<bool>("train", "csa_enabled", CSAREC_REF(c.train.csa_enabled)),

      enumerated("augment", "kind", CSAREC_REF(c.train.augmentation.kind), &augmentation_kind_from_string),
      typed<double>("augment", "sigma", CSAREC_REF(c.train.augmentation.sigma)),
      typed<double>("augment", "alpha", CSAREC_REF(c.train.augmentation.alpha)),
      typed<double>("augment", "beta", CSAREC_REF(c.train.augmentation.beta)),
      typed<int>("augment", "min_len_T", CSAREC_REF(c.train.augmentation.min_len_T)),
      typed<double>("augment", "drop_p", CSAREC_REF(c.train.augmentation.drop_p)),
      typed<int>("augment", "n", CSAREC_REF(c.train.augmentation.n)),

      enumerated("eval", "score_source", CSAREC_REF(c.eval.score_source), &score_source_from_string),
      typed<std::string>("eval", "filter", CSAREC_REF(c.eval.filter)),
      typed<std::vector<int>>("eval", "ks", CSAREC_REF(c.eval.ks)),
      typed<std::uint64_t>("eval", "seed", CSAREC_REF(c.eval.seed)),
      typed<std::string>("eval", "split", CSAREC_REF(c.eval.split)),

      typed<std::string>("simulator", "matrix", CSAREC_REF(c.simulator.matrix)),
      typed<int>("simulator", "users", CSAREC_REF(c.simulator.users)),
      typed<int>("simulator", "rank", CSAREC_REF(c.simulator.rank)),
      typed<int>("simulator", "rounds", CSAREC_REF(c.simulator.rounds)),
      typed<double>("simulator", "gamma", CSAREC_REF(c.simulator.gamma)),
      typed<int>("simulator", "repetitions", CSAREC_REF(c.simulator.repetitions)),
      typed<bool>("simulator", "no_repeat", CSAREC_REF(c.simulator.no_repeat)),
      typed<int>("simulator", "warm_start", CSAREC_REF(c.simulator.warm_start)),
      typed<double>("simulator", "holdout_fraction", CSAREC_REF(c.simulator.holdout_fraction)),
      typed<std::uint64_t>("simulator", "seed", CSAREC_REF(c.simulator.seed)),

      typed<std::string>("output", "dir", CSAREC_REF(c.output_dir)),
  };
  return fields;
}

#undef CSAREC_REF

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : schema())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration: " + join(problems, "; ")), problems_(std::move(problems)) {}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.source = eval.score_source;
  o.ks = eval.ks;
  o.seed = eval.seed;
  o.deterministic = train.deterministic;
  if (eval.filter == "all")
    o.filter.reset();
  else
    o.filter = feedback_from_string(eval.filter);
  return o;
}

ClusterCorpusSpec RunConfig::corpus_spec() const {
  ClusterCorpusSpec c;
  c.chain.num_items = synthetic.items;
  c.chain.num_clusters = synthetic.clusters;
  c.chain.leak = synthetic.leak;
  c.chain.favoured = synthetic.favoured;
  c.chain.favoured_mass = synthetic.favoured_mass;
  c.num_sessions = synthetic.sessions;
  c.purchase_min = synthetic.purchase_min;
  c.purchase_max = synthetic.purchase_max;
  c.min_length = synthetic.min_length;
  c.max_length = synthetic.max_length;
  c.seed = synthetic.seed;
  return c;
}

EnvironmentOptions RunConfig::environment_options() const {
  EnvironmentOptions o;
  o.no_repeat = simulator.no_repeat;
  o.warm_start = simulator.warm_start;
  o.holdout_fraction = simulator.holdout_fraction;
  o.seed = simulator.seed;
  return o;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"normal", "sqn", "csa-n", "csa-u", "csa-m", "csa-d"};
  return names;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  TrainConfig& t = cfg.train;
  if (name == "normal") {
    t.weights = {1.0, 0.0, 0.0, 0.0};
    t.csa_enabled = false;
    t.contrastive_mode = ContrastiveMode::off;
  } else if (name == "sqn") {
    t.weights = {1.0, 1.0, 0.0, 0.0};
    t.csa_enabled = false;
    t.contrastive_mode = ContrastiveMode::off;
  } else if (name == "csa-n" || name == "csa-u" || name == "csa-m" || name == "csa-d") {
    t.weights = {1.0, 1.0, 1.0, 1.0};
    t.csa_enabled = true;
    t.contrastive_mode = ContrastiveMode::state;
    const char k = name.back();
    t.augmentation.kind = k == 'n'   ? AugmentationKind::gaussian
                          : k == 'u' ? AugmentationKind::uniform
                          : k == 'm' ? AugmentationKind::item_mask
                                     : AugmentationKind::dim_dropout;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected " + join(preset_names(), ", ") + ")");
  }
  cfg.preset = name;
}

void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw std::invalid_argument("expected section.key, got '" + dotted_key + "'");
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  if (section == "train" && key == "preset") {
    apply_preset(cfg, trim(value));
    return;
  }
  const Field* f = find_field(section, key);
  if (!f) throw std::invalid_argument("unknown key " + dotted_key);
  try {
    f->set(cfg, value);
  } catch (const std::exception& e) {
    throw std::invalid_argument(dotted_key + ": " + e.what());
  }
}

RunConfig parse_run_config(std::istream& in, RunConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError({"line " + std::to_string(e.line()) + ": " + e.message()});
  }
  std::vector<std::string> problems;
  // Preset first, so that explicit keys override it.
  if (auto train = tree.get_child_optional("train")) {
    if (auto preset = train->get_optional<std::string>("preset")) {
      try {
        apply_preset(base, trim(*preset));
      } catch (const std::exception& e) {
        problems.push_back(std::string("train.preset: ") + e.what());
      }
    }
  }
  for (const auto& [section, keys] : tree) {
    if (!keys.data().empty() && keys.empty()) {
      problems.push_back("key '" + section + "' outside any section");
      continue;
    }
    for (const auto& [key, node] : keys) {
      if (section == "train" && key == "preset") continue;
      const Field* f = find_field(section, key);
      if (!f) {
        problems.push_back("unknown key " + section + "." + key);
        continue;
      }
      try {
        f->set(base, node.data());
      } catch (const std::exception& e) {
        problems.push_back(section + "." + key + ": " + e.what());
      }
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path});
  return parse_run_config(in, std::move(base));
}

void validate(const RunConfig& cfg) {
  std::vector<std::string> problems;
  auto check = [&](const std::string& where, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
  };
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  const DataConfig& d = cfg.data;
  require(d.labels == "default" || d.labels == "retail_rocket", "data.labels must be default or retail_rocket");
  require(std::isfinite(d.rewards.click) && std::isfinite(d.rewards.purchase), "data rewards must be finite");
  require(d.split.train > 0.0 && d.split.validation >= 0.0 && d.split.test >= 0.0,
          "data split ratios must be non-negative with train > 0");
  require(!d.prepared.empty(), "data.prepared must name a directory");

  const SyntheticConfig& s = cfg.synthetic;
  require(s.sessions >= 3, "synthetic.sessions must be >= 3");
  require(s.items >= 2, "synthetic.items must be >= 2");
  require(s.clusters >= 1 && s.clusters <= s.items, "synthetic.clusters must lie in [1, items]");
  require(s.leak >= 0.0 && s.leak <= 1.0, "synthetic.leak must lie in [0, 1]");
  require(s.favoured >= 0, "synthetic.favoured must be >= 0");
  require(s.favoured_mass >= 0.0 && s.favoured_mass <= 1.0, "synthetic.favoured_mass must lie in [0, 1]");
  require(s.purchase_min >= 0.0 && s.purchase_max >= s.purchase_min && s.purchase_max <= 1.0,
          "synthetic purchase probabilities must satisfy 0 <= purchase_min <= purchase_max <= 1");
  require(s.min_length >= 3 && s.max_length >= s.min_length, "synthetic lengths must satisfy 3 <= min_length <= max_length");

  check("encoder", [&] { cfg.encoder.validate(); });
  for (const std::string& p : cfg.train.problems()) problems.push_back("train: " + p);

  const EvalConfig& e = cfg.eval;
  require(e.filter == "purchase" || e.filter == "click" || e.filter == "all", "eval.filter must be purchase, click or all");
  require(e.split == "test" || e.split == "validation", "eval.split must be test or validation");
  bool ks_ok = !e.ks.empty();
  for (int k : e.ks) ks_ok = ks_ok && k >= 1;
  require(ks_ok, "eval.ks must be positive integers");

  const SimulatorConfig& m = cfg.simulator;
  require(m.users >= 1 && m.rank >= 1, "simulator.users and simulator.rank must be >= 1");
  require(m.rounds >= 1, "simulator.rounds must be >= 1");
  require(m.gamma >= 0.0 && m.gamma <= 1.0, "simulator.gamma must lie in [0, 1]");
  require(m.repetitions >= 1, "simulator.repetitions must be >= 1");
  require(m.warm_start >= 0, "simulator.warm_start must be >= 0");
  require(m.holdout_fraction >= 0.0 && m.holdout_fraction < 1.0, "simulator.holdout_fraction must lie in [0, 1)");
  require(!cfg.output_dir.empty(), "output.dir must not be empty");

  if (!problems.empty()) throw ConfigError(problems);
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : schema()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
      if (section == "train" && !cfg.preset.empty()) out << "preset = " << cfg.preset << "\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"embedding_dim", c.embedding_dim},
          {"max_len", c.max_len},
          {"attention_heads", c.attention_heads},
          {"dropout", c.dropout}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  const AugmentationSpec& a = c.augmentation;
  return {{"weights", {{"w_s", c.weights.w_s}, {"w_q", c.weights.w_q}, {"w_a", c.weights.w_a}, {"w_c", c.weights.w_c}}},
          {"gamma", c.gamma},
          {"augmentation",
           {{"kind", to_string(a.kind)},
            {"sigma", a.sigma},
            {"alpha", a.alpha},
            {"beta", a.beta},
            {"min_len_T", a.min_len_T},
            {"drop_p", a.drop_p},
            {"n", a.n}}},
          {"contrastive_mode", to_string(c.contrastive_mode)},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"csa_enabled", c.csa_enabled}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto& w = j.at("weights");
  c.weights = {w.at("w_s").get<double>(), w.at("w_q").get<double>(), w.at("w_a").get<double>(),
               w.at("w_c").get<double>()};
  c.gamma = j.at("gamma").get<double>();
  const auto& a = j.at("augmentation");
  c.augmentation.kind = augmentation_kind_from_string(a.at("kind").get<std::string>());
  c.augmentation.sigma = a.at("sigma").get<double>();
  c.augmentation.alpha = a.at("alpha").get<double>();
  c.augmentation.beta = a.at("beta").get<double>();
  c.augmentation.min_len_T = a.at("min_len_T").get<int>();
  c.augmentation.drop_p = a.at("drop_p").get<double>();
  c.augmentation.n = a.at("n").get<int>();
  c.contrastive_mode = contrastive_mode_from_string(j.at("contrastive_mode").get<std::string>());
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.deterministic = j.at("deterministic").get<bool>();
  c.csa_enabled = j.at("csa_enabled").get<bool>();
  return c;
}

}  // namespace csarec
