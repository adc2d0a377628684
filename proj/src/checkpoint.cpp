// SPDX-License-Identifier: Apache-2.0
#include "csarec/checkpoint.hpp"

#include "csarec/config.hpp"
#include "csarec/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace csarec {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

struct TensorRef {
  std::string name;
  const Matrix* value;
};

std::string rng_text(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_text(const std::string& text) {
  Rng rng;
  std::istringstream ss(text);
  ss >> rng;
  if (!ss) throw CheckpointError("corrupt rng state in checkpoint");
  return rng;
}

void write_container(const std::string& path, nlohmann::json header, const std::vector<TensorRef>& tensors) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    table.push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value->size());
  }
  header["format"] = "csarec-checkpoint";
  header["version"] = kCheckpointVersion;
  header["tensors"] = std::move(table);
  const std::string text = header.dump();
  atomic_write(
      path,
      [&](std::ostream& out) {
        out.write(kCheckpointMagic, sizeof kCheckpointMagic);
        const std::uint32_t version = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        const std::uint64_t size = text.size();
        out.write(reinterpret_cast<const char*>(&size), sizeof size);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : tensors) {
          // Row-major on disk regardless of Eigen's storage order.
          const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = *t.value;
          out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
        }
      },
      /*binary=*/true);
}

nlohmann::json model_header(const RecommenderModel& model) {
  return {{"catalog", {{"num_items", model.catalog().num_items}}},
          {"encoder", to_json(model.encoder().config())},
          {"head_activation", to_string(model.q.a.activation)}};
}

std::vector<TensorRef> model_tensors(const RecommenderModel& model) {
  std::vector<TensorRef> out;
  for (const Parameter* p : model.parameters()) out.push_back({p->name, &p->value});
  return out;
}

}  // namespace

void save_model(const std::string& path, const RecommenderModel& model, const nlohmann::json& extra) {
  nlohmann::json header = model_header(model);
  header["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  header["train_config"] = nullptr;
  header["train_state"] = nullptr;
  write_container(path, std::move(header), model_tensors(model));
}

void save_checkpoint(const std::string& path, const TrainState& state, const TrainConfig& cfg,
                     const nlohmann::json& extra) {
  nlohmann::json header = model_header(state.model);
  header["extra"] = extra.is_null() ? nlohmann::json::object() : extra;
  header["train_config"] = to_json(cfg);
  std::vector<TensorRef> tensors = model_tensors(state.model);
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& [name, slot] : state.optimizer.slots()) {
    slots.push_back({{"name", name}, {"step", slot.step}});
    tensors.push_back({"adam.m:" + name, &slot.m});
    tensors.push_back({"adam.v:" + name, &slot.v});
  }
  const AdamConfig& ac = state.optimizer.config();
  header["train_state"] = {
      {"step", state.step},
      {"epoch", state.epoch},
      {"best_metric", std::isfinite(state.best_metric) ? nlohmann::json(state.best_metric) : nlohmann::json(nullptr)},
      {"best_checkpoint", state.best_checkpoint},
      {"rng",
       {{"coin", rng_text(state.rng.coin)},
        {"negatives", rng_text(state.rng.negatives)},
        {"augmentation", rng_text(state.rng.augmentation)},
        {"dropout", rng_text(state.rng.dropout)}}},
      {"adam",
       {{"learning_rate", ac.learning_rate},
        {"beta1", ac.beta1},
        {"beta2", ac.beta2},
        {"epsilon", ac.epsilon},
        {"slots", std::move(slots)}}}};
  write_container(path, std::move(header), tensors);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t size = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw CheckpointError(path + " is not a checkpoint (bad magic)");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in || size > (1ull << 30)) throw CheckpointError(path + ": corrupt header size");
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw CheckpointError(path + ": truncated header");
  const std::streamoff data_start = in.tellg();

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": malformed header: " + e.what());
  }

  auto read_tensor = [&](const nlohmann::json& entry) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!in) throw CheckpointError(path + ": truncated tensor " + entry.at("name").get<std::string>());
    return Matrix(rm);
  };

  try {
    CatalogInfo catalog{header.at("catalog").at("num_items").get<int>()};
    const EncoderConfig enc = encoder_config_from_json(header.at("encoder"));
    const Activation act = activation_from_string(header.at("head_activation").get<std::string>());
    std::optional<TrainConfig> cfg;
    if (!header.at("train_config").is_null()) cfg = train_config_from_json(header.at("train_config"));

    RecommenderModel model(catalog, enc, act, 0);
    std::map<std::string, const nlohmann::json*> table;
    for (const auto& entry : header.at("tensors")) table[entry.at("name").get<std::string>()] = &entry;
    for (Parameter* p : model.parameters()) {
      auto it = table.find(p->name);
      if (it == table.end()) throw CheckpointError(path + ": missing tensor " + p->name);
      Matrix v = read_tensor(*it->second);
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
        throw CheckpointError(path + ": shape mismatch for " + p->name);
      p->value = std::move(v);
      p->zero_grad();
    }

    Checkpoint ck{make_train_state(std::move(model), cfg.value_or(TrainConfig{})), cfg, false,
                  header.value("extra", nlohmann::json::object())};
    const auto& ts = header.at("train_state");
    if (!ts.is_null()) {
      ck.has_train_state = true;
      ck.state.step = ts.at("step").get<std::int64_t>();
      ck.state.epoch = ts.at("epoch").get<int>();
      ck.state.best_metric = ts.at("best_metric").is_null() ? -std::numeric_limits<double>::infinity()
                                                            : ts.at("best_metric").get<double>();
      ck.state.best_checkpoint = ts.at("best_checkpoint").get<std::string>();
      const auto& r = ts.at("rng");
      ck.state.rng.coin = rng_from_text(r.at("coin").get<std::string>());
      ck.state.rng.negatives = rng_from_text(r.at("negatives").get<std::string>());
      ck.state.rng.augmentation = rng_from_text(r.at("augmentation").get<std::string>());
      ck.state.rng.dropout = rng_from_text(r.at("dropout").get<std::string>());
      const auto& adam = ts.at("adam");
      AdamConfig ac;
      ac.learning_rate = adam.at("learning_rate").get<double>();
      ac.beta1 = adam.at("beta1").get<double>();
      ac.beta2 = adam.at("beta2").get<double>();
      ac.epsilon = adam.at("epsilon").get<double>();
      ck.state.optimizer = Adam(ac);
      for (const auto& slot : adam.at("slots")) {
        const std::string name = slot.at("name").get<std::string>();
        auto& s = ck.state.optimizer.slots()[name];
        s.step = slot.at("step").get<std::int64_t>();
        for (const char* kind : {"adam.m:", "adam.v:"}) {
          auto it = table.find(kind + name);
          if (it == table.end()) throw CheckpointError(path + ": missing optimizer tensor " + kind + name);
          (kind[5] == 'm' ? s.m : s.v) = read_tensor(*it->second);
        }
      }
    }
    return ck;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

RecommenderModel load_model(const std::string& path) { return std::move(load_checkpoint(path).state.model); }

}  // namespace csarec
