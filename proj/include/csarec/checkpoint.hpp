// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/model.hpp"
#include "csarec/trainer.hpp"

#include <optional>
#include <string>

#include "json.hpp"

namespace csarec {

// Binary container: 8-byte magic, u32 format version, u64 header size, a JSON
// header (catalogue, encoder and head settings, tensor table, optional
// training state) and the tensors as raw little-endian doubles.
inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'A', 'R', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_model(const std::string& path, const RecommenderModel& model, const nlohmann::json& extra = {});
// Model plus optimizer moments, step/epoch counters and rng streams.
void save_checkpoint(const std::string& path, const TrainState& state, const TrainConfig& cfg,
                     const nlohmann::json& extra = {});

struct Checkpoint {
  TrainState state;
  std::optional<TrainConfig> config;
  bool has_train_state = false;
  nlohmann::json extra;
};

Checkpoint load_checkpoint(const std::string& path);
RecommenderModel load_model(const std::string& path);

}  // namespace csarec
