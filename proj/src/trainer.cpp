// SPDX-License-Identifier: Apache-2.0
#include "csarec/trainer.hpp"

#include "csarec/checkpoint.hpp"
#include "csarec/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace csarec {

using autodiff::Tape;
using autodiff::Var;

std::string to_string(ContrastiveMode m) {
  switch (m) {
    case ContrastiveMode::state:
      return "state";
    case ContrastiveMode::action:
      return "action";
    case ContrastiveMode::off:
      return "off";
  }
  return "off";
}

ContrastiveMode contrastive_mode_from_string(const std::string& s) {
  if (s == "state") return ContrastiveMode::state;
  if (s == "action") return ContrastiveMode::action;
  if (s == "off") return ContrastiveMode::off;
  throw std::invalid_argument("unknown contrastive mode '" + s + "' (expected state, action or off)");
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  auto nested = [&](const auto& part) {
    try {
      part.validate();
    } catch (const std::exception& e) {
      out.push_back(e.what());
    }
  };
  nested(weights);
  nested(augmentation);
  auto require = [&](bool ok, const char* what) {
    if (!ok) out.emplace_back(what);
  };
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(!contrastive_active() || batch_size >= 2, "batch_size must be >= 2 when the contrastive loss is on");
  require(!contrastive_active() || augmentation.n >= 1, "the contrastive loss needs augmentation n >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(max_epochs >= 0, "max_epochs must be >= 0");
  require(eval_every >= 1, "eval_every must be >= 1");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string what = p.front();
  for (std::size_t i = 1; i < p.size(); ++i) what += "; " + p[i];
  throw std::invalid_argument(what);
}

RngStreams RngStreams::from_seed(std::uint64_t seed) {
  auto stream = [seed](std::uint64_t tag) {
    std::seed_seq seq{seed, tag};
    return Rng(seq);
  };
  return {stream(1), stream(2), stream(3), stream(4)};
}

TrainState make_train_state(const CatalogInfo& catalog, const EncoderConfig& encoder, Activation head_activation,
                            const TrainConfig& cfg) {
  return make_train_state(RecommenderModel(catalog, encoder, head_activation, cfg.seed), cfg);
}

TrainState make_train_state(RecommenderModel model, const TrainConfig& cfg) {
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  return TrainState{std::move(model), Adam(adam), 0, 0, RngStreams::from_seed(cfg.seed), -std::numeric_limits<double>::infinity(), {}};
}

// ---- one step ------------------------------------------------------------------

StepPlan plan_step(TrainState& state, std::span<const ReplayTuple> batch, const TrainConfig& cfg,
                   std::optional<QHeadId> force_online) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  RecommenderModel& model = state.model;
  const SequenceEncoder& enc = model.encoder();
  const CatalogInfo& cat = model.catalog();
  const int b = static_cast<int>(batch.size());
  const int len = static_cast<int>(batch.front().state_seq.size());

  StepPlan plan;
  plan.online = force_online ? *force_online
                             : (std::bernoulli_distribution(0.5)(state.rng.coin) ? QHeadId::a : QHeadId::b);
  plan.states.length = len;
  plan.next_states.length = len;
  plan.states.ids.reserve(static_cast<std::size_t>(b) * len);
  plan.next_states.ids.reserve(static_cast<std::size_t>(b) * len);
  plan.actions.resize(static_cast<std::size_t>(b));
  plan.rewards.resize(b);
  plan.terminal.resize(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const ReplayTuple& t = batch[static_cast<std::size_t>(i)];
    if (static_cast<int>(t.state_seq.size()) != len || static_cast<int>(t.next_seq.size()) != len)
      throw std::invalid_argument("train_step: tuples in a batch must share one window length");
    plan.states.ids.insert(plan.states.ids.end(), t.state_seq.begin(), t.state_seq.end());
    plan.next_states.ids.insert(plan.next_states.ids.end(), t.next_seq.begin(), t.next_seq.end());
    plan.actions[static_cast<std::size_t>(i)] = t.action;
    plan.rewards(i) = t.reward;
    plan.terminal[static_cast<std::size_t>(i)] = t.terminal ? 1 : 0;
  }

  if (cfg.contrastive_active()) {
    if (b < 2) throw std::invalid_argument("train_step: the contrastive loss needs at least two tuples per batch");
    std::uniform_int_distribution<int> other(0, b - 2);
    plan.negatives.resize(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      const int j = other(state.rng.negatives);
      plan.negatives[static_cast<std::size_t>(i)] = j >= i ? j + 1 : j;
    }
  }

  const AugmentationSpec& spec = cfg.augmentation;
  if (cfg.views_needed()) {
    for (int j = 0; j < spec.n; ++j)
      plan.views_t.push_back(draw_batch_view(spec, plan.states, enc.dim(), cat.pad_id(), cat.mask_id(), state.rng.augmentation));
  }
  if (cfg.augmented_active()) {
    for (int j = 0; j < spec.n; ++j)
      plan.views_next.push_back(
          draw_batch_view(spec, plan.next_states, enc.dim(), cat.pad_id(), cat.mask_id(), state.rng.augmentation));
  }

  // Detached bootstrap targets from current parameters.
  if (cfg.weights.w_q > 0.0 || cfg.augmented_active()) {
    const Matrix next = enc.infer(plan.next_states);
    const LinearHead& on = model.q.head(plan.online);
    const LinearHead& off = model.q.head(other(plan.online));
    if (cfg.weights.w_q > 0.0)
      plan.targets = double_q_targets(plan.rewards, on.infer(next), off.infer(next), cfg.gamma, plan.terminal);
    for (const BatchView& v : plan.views_next) {
      const Matrix s = apply_view_values(spec, v, next, enc);
      plan.view_targets.push_back(double_q_targets(plan.rewards, on.infer(s), off.infer(s), cfg.gamma, plan.terminal));
    }
  }
  return plan;
}

StepGraph build_step_loss(Tape& tape, RecommenderModel& model, const StepPlan& plan, const TrainConfig& cfg,
                          Rng* dropout_rng) {
  using namespace autodiff;
  StepGraph g;
  const LossWeights& w = cfg.weights;
  SequenceEncoder& enc = model.encoder();
  LinearHead& qhead = model.q.head(plan.online);

  Var s = enc.encode(tape, plan.states, dropout_rng);
  std::vector<Var> terms;
  std::vector<double> term_weights;

  if (w.w_s > 0.0) {
    g.supervised = batch_supervised_ce(model.supervised.forward(tape, s), plan.actions);
    g.values.supervised = g.supervised.scalar();
    terms.push_back(g.supervised);
    term_weights.push_back(w.w_s);
  }

  Var q_all;
  Var q_sa;
  if (w.w_q > 0.0 || cfg.contrastive_active()) {
    q_all = qhead.forward(tape, s);
    q_sa = pick(q_all, plan.actions);
  }
  if (w.w_q > 0.0) {
    g.q_td = batch_td(tape, q_sa, plan.targets);
    g.values.q_td = g.q_td.scalar();
    terms.push_back(g.q_td);
    term_weights.push_back(w.w_q);
  }

  std::vector<Var> q_views;
  for (const BatchView& v : plan.views_t)
    q_views.push_back(pick(qhead.forward(tape, apply_view(tape, cfg.augmentation, v, s, enc)), plan.actions));

  if (cfg.augmented_active()) {
    Var la = batch_td(tape, q_views[0], plan.view_targets[0]);
    for (std::size_t j = 1; j < q_views.size(); ++j) la = add(la, batch_td(tape, q_views[j], plan.view_targets[j]));
    g.augmented = la;
    g.values.augmented = la.scalar();
    terms.push_back(la);
    term_weights.push_back(w.w_a);
  }

  if (cfg.contrastive_active()) {
    Var q_bar = q_views[0];
    for (std::size_t j = 1; j < q_views.size(); ++j) q_bar = add(q_bar, q_views[j]);
    q_bar = scale(q_bar, 1.0 / static_cast<double>(q_views.size()));
    Var q_neg;
    if (cfg.contrastive_mode == ContrastiveMode::state) {
      q_neg = pick(gather_rows(q_all, plan.negatives), plan.actions);
    } else {
      std::vector<int> neg_actions(plan.negatives.size());
      for (std::size_t i = 0; i < neg_actions.size(); ++i)
        neg_actions[i] = plan.actions[static_cast<std::size_t>(plan.negatives[i])];
      q_neg = pick(q_all, neg_actions);
    }
    g.contrastive = batch_contrastive(q_sa, q_neg, q_bar);
    g.values.contrastive = g.contrastive.scalar();
    terms.push_back(g.contrastive);
    term_weights.push_back(w.w_c);
  }

  if (terms.empty()) {
    g.total = tape.constant(Matrix::Zero(1, 1));
  } else {
    g.total = scale(terms[0], term_weights[0]);
    for (std::size_t i = 1; i < terms.size(); ++i) g.total = add(g.total, scale(terms[i], term_weights[i]));
    g.has_gradient = true;
  }
  g.values.total = g.total.scalar();
  return g;
}

LossBreakdown train_step(TrainState& state, std::span<const ReplayTuple> batch, const TrainConfig& cfg,
                         std::optional<QHeadId> force_online) {
  const StepPlan plan = plan_step(state, batch, cfg, force_online);
  RecommenderModel& model = state.model;
  model.zero_grad();
  Tape tape;
  const StepGraph g = build_step_loss(tape, model, plan, cfg, &state.rng.dropout);
  if (!std::isfinite(g.values.total))
    throw TrainingError("non-finite loss at step " + std::to_string(state.step), g.values);
  if (g.has_gradient) tape.backward(g.total);

  std::vector<Parameter*> active = model.encoder().parameters();
  for (Parameter* p : model.supervised.parameters()) active.push_back(p);
  for (Parameter* p : model.q.head(plan.online).parameters()) active.push_back(p);
  state.optimizer.config().learning_rate = cfg.learning_rate;
  state.optimizer.step(active);
  ++state.step;
  return g.values;
}

// ---- epoch loop ------------------------------------------------------------------

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{seed, std::uint64_t{0x5348554646ull}, static_cast<std::uint64_t>(epoch)};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::optional<MetricReport> validation_report(const RecommenderModel& model, std::span<const ReplayTuple> tuples,
                                              const TrainConfig& cfg) {
  if (tuples.empty()) return std::nullopt;
  EvalOptions opts;
  opts.seed = cfg.seed;
  opts.deterministic = cfg.deterministic;
  const bool any_purchase =
      std::any_of(tuples.begin(), tuples.end(), [](const ReplayTuple& t) { return t.feedback == Feedback::purchase; });
  if (!any_purchase) opts.filter.reset();
  return evaluate(model, tuples, opts);
}

namespace {

nlohmann::json step_record(std::int64_t step, int epoch, const LossBreakdown& l, double wall) {
  return {{"step", step},           {"epoch", epoch},       {"supervised", l.supervised},
          {"q_td", l.q_td},         {"augmented", l.augmented}, {"contrastive", l.contrastive},
          {"total", l.total},       {"wall_time", wall}};
}

std::string checkpoint_name(std::int64_t step, const std::optional<MetricReport>& report) {
  char metric[32];
  if (report)
    std::snprintf(metric, sizeof metric, "%.4f", report->ndcg_at(10));
  else
    std::snprintf(metric, sizeof metric, "na");
  return "checkpoint-step" + std::to_string(step) + "-ndcg10-" + metric + ".ckpt";
}

}  // namespace

TrainResult train(TrainState& state, std::span<const ReplayTuple> train_tuples,
                  std::span<const ReplayTuple> validation_tuples, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
  cfg.validate();
  if (train_tuples.empty()) throw std::invalid_argument("train: the training split has no tuples");
  namespace fs = std::filesystem;
  const bool write = !outputs.directory.empty();
  const fs::path dir(outputs.directory);
  std::ofstream log_file;
  if (write) {
    fs::create_directories(dir);
    const auto mode = state.step == 0 && state.epoch == 0 ? std::ios::trunc : std::ios::app;
    log_file.open(dir / "train_log.ndjson", std::ios::out | mode);
    if (!log_file) throw std::runtime_error("cannot open training log in " + dir.string());
  }
  const auto started = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };

  TrainResult result;
  auto retain = [&](const std::optional<MetricReport>& report) {
    const double metric = report ? report->ndcg_at(10) : -std::numeric_limits<double>::infinity();
    const bool improved = !report || state.best_checkpoint.empty() || metric > state.best_metric;
    if (!improved) return;
    state.best_metric = metric;
    result.best_validation = report;
    if (!write) return;
    const std::string name = checkpoint_name(state.step, report);
    nlohmann::json extra;
    if (report) extra["validation"] = report->to_json();
    save_checkpoint((dir / name).string(), state, cfg, extra);
    if (!state.best_checkpoint.empty() && state.best_checkpoint != name) fs::remove(dir / state.best_checkpoint);
    state.best_checkpoint = name;
  };

  if (state.step == 0 && state.epoch == 0) retain(validation_report(state.model, validation_tuples, cfg));

  std::vector<ReplayTuple> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  int epochs_this_call = 0;
  while (state.epoch < cfg.max_epochs) {
    const int epoch = state.epoch;
    const auto order = epoch_order(train_tuples.size(), cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      // A lone trailing tuple has no in-batch negative.
      if (cfg.contrastive_active() && end - start < 2) continue;
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_tuples[order[i]]);
      const LossBreakdown l = train_step(state, batch, cfg);
      result.step_losses.push_back(l);
      rec.mean_losses.supervised += l.supervised;
      rec.mean_losses.q_td += l.q_td;
      rec.mean_losses.augmented += l.augmented;
      rec.mean_losses.contrastive += l.contrastive;
      rec.mean_losses.total += l.total;
      ++steps;
      const std::string line = step_record(state.step, epoch, l, wall()).dump();
      if (write) log_file << line << '\n';
      if (outputs.log) *outputs.log << line << '\n';
    }
    if (steps > 0) {
      const double k = static_cast<double>(steps);
      rec.mean_losses.supervised /= k;
      rec.mean_losses.q_td /= k;
      rec.mean_losses.augmented /= k;
      rec.mean_losses.contrastive /= k;
      rec.mean_losses.total /= k;
    }
    state.epoch = epoch + 1;
    rec.step = state.step;
    if (state.epoch % cfg.eval_every == 0 || state.epoch == cfg.max_epochs) {
      rec.validation = validation_report(state.model, validation_tuples, cfg);
      retain(rec.validation);
    }
    result.epochs.push_back(rec);
    if (write) {
      log_file.flush();
      save_checkpoint((dir / "last.ckpt").string(), state, cfg, {});
    }
    ++epochs_this_call;
    if (outputs.stop_after_epochs && epochs_this_call >= *outputs.stop_after_epochs) break;
  }
  if (write) {
    // A run with no epochs left still leaves a resumable checkpoint.
    if (epochs_this_call == 0) save_checkpoint((dir / "last.ckpt").string(), state, cfg, {});
    result.best_checkpoint = state.best_checkpoint.empty() ? "" : (dir / state.best_checkpoint).string();
    result.last_checkpoint = (dir / "last.ckpt").string();
  }
  return result;
}

}  // namespace csarec
