// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/augment.hpp"
#include "csarec/datasets.hpp"
#include "csarec/losses.hpp"
#include "csarec/model.hpp"
#include "csarec/offline_eval.hpp"
#include "csarec/optimizer.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csarec {

enum class ContrastiveMode { state, action, off };

std::string to_string(ContrastiveMode m);
ContrastiveMode contrastive_mode_from_string(const std::string& s);

struct TrainConfig {
  LossWeights weights;
  double gamma = 0.5;
  AugmentationSpec augmentation;
  ContrastiveMode contrastive_mode = ContrastiveMode::state;
  int batch_size = 256;
  double learning_rate = 0.005;
  int max_epochs = 5;
  int eval_every = 1;
  std::uint64_t seed = 0;
  bool deterministic = true;
  // Master switch for the augmented and contrastive terms. Off gives the
  // plain supervised + double-Q step whatever the weights say.
  bool csa_enabled = true;

  // Every invalid field; validate() throws them joined.
  std::vector<std::string> problems() const;
  void validate() const;
  bool augmented_active() const { return csa_enabled && weights.w_a > 0.0 && augmentation.n > 0; }
  bool contrastive_active() const {
    return csa_enabled && weights.w_c > 0.0 && contrastive_mode != ContrastiveMode::off;
  }
  bool views_needed() const { return augmented_active() || contrastive_active(); }
};

// Independent random streams, so that enabling one term never shifts the
// draws of another.
struct RngStreams {
  Rng coin;
  Rng negatives;
  Rng augmentation;
  Rng dropout;

  static RngStreams from_seed(std::uint64_t seed);
  bool operator==(const RngStreams&) const = default;
};

struct TrainState {
  RecommenderModel model;
  Adam optimizer;
  std::int64_t step = 0;
  int epoch = 0;
  RngStreams rng;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::string best_checkpoint;
};

// Fresh state: model weights and all streams derive from cfg.seed.
TrainState make_train_state(const CatalogInfo& catalog, const EncoderConfig& encoder, Activation head_activation,
                            const TrainConfig& cfg);
TrainState make_train_state(RecommenderModel model, const TrainConfig& cfg);

// Every random draw of one step plus the detached targets. With a plan fixed,
// the step loss is a deterministic function of the parameters.
struct StepPlan {
  QHeadId online = QHeadId::a;
  SequenceBatch states;
  SequenceBatch next_states;
  std::vector<int> actions;
  Vector rewards;
  std::vector<unsigned char> terminal;
  // Row paired with each example for the contrastive negative.
  std::vector<int> negatives;
  std::vector<BatchView> views_t;
  std::vector<BatchView> views_next;
  Vector targets;
  std::vector<Vector> view_targets;
};

StepPlan plan_step(TrainState& state, std::span<const ReplayTuple> batch, const TrainConfig& cfg,
                   std::optional<QHeadId> force_online = std::nullopt);

struct StepGraph {
  autodiff::Var supervised;
  autodiff::Var q_td;
  autodiff::Var augmented;
  autodiff::Var contrastive;
  autodiff::Var total;
  LossBreakdown values;
  bool has_gradient = false;
};

// Records the weighted step loss on `tape`. Terms with zero weight (or
// disabled paths) are not recorded and report 0.
StepGraph build_step_loss(autodiff::Tape& tape, RecommenderModel& model, const StepPlan& plan, const TrainConfig& cfg,
                          Rng* dropout_rng = nullptr);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, const LossBreakdown& b) : std::runtime_error(what), breakdown_(b) {}
  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  LossBreakdown breakdown_;
};

// One optimizer update of encoder, supervised head and the online Q head.
LossBreakdown train_step(TrainState& state, std::span<const ReplayTuple> batch, const TrainConfig& cfg,
                         std::optional<QHeadId> force_online = std::nullopt);

// Tuple order for one epoch, derived from the master seed and epoch index only.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct TrainOutputs {
  // Checkpoints and logs go here; nothing is written when empty.
  std::string directory;
  // Optional extra sink for the per-step NDJSON records.
  std::ostream* log = nullptr;
  // Stop after this many epochs in this call (for interrupt/resume tests).
  std::optional<int> stop_after_epochs;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown mean_losses;
  std::optional<MetricReport> validation;
};

struct TrainResult {
  std::vector<LossBreakdown> step_losses;
  std::vector<EpochRecord> epochs;
  std::optional<MetricReport> best_validation;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// Runs epochs state.epoch .. cfg.max_epochs-1. Validation NDCG@10 on
// purchases (all events when there are none) picks the retained checkpoint.
TrainResult train(TrainState& state, std::span<const ReplayTuple> train_tuples,
                  std::span<const ReplayTuple> validation_tuples, const TrainConfig& cfg, const TrainOutputs& outputs = {});

// Metric used for checkpoint selection; nullopt when there is nothing to rank.
std::optional<MetricReport> validation_report(const RecommenderModel& model, std::span<const ReplayTuple> tuples,
                                              const TrainConfig& cfg);

}  // namespace csarec
