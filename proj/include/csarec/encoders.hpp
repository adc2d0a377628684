// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/autodiff.hpp"
#include "csarec/datasets.hpp"

#include <memory>
#include <string>
#include <vector>

namespace csarec {

// Encoder hidden state s_t for one sequence.
using StateVector = Vector;

enum class EncoderKind { recurrent, self_attention };

std::string to_string(EncoderKind k);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderConfig {
  int embedding_dim = 64;
  int max_len = 10;
  EncoderKind kind = EncoderKind::recurrent;
  int attention_heads = 1;
  // Inverted dropout on input embeddings, applied only when a dropout rng is supplied.
  double dropout = 0.0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Row-major batch of equal-length id sequences.
struct SequenceBatch {
  int length = 0;
  std::vector<int> ids;

  int rows() const { return length == 0 ? 0 : static_cast<int>(ids.size()) / length; }
  int at(int row, int pos) const { return ids[static_cast<std::size_t>(row) * length + pos]; }

  // Throws std::invalid_argument on ragged input.
  static SequenceBatch from_rows(const std::vector<std::vector<int>>& rows);
  static SequenceBatch single(const std::vector<int>& seq);
};

// Maps fixed-length id sequences to d-dimensional states. Implementations
// own their parameters; parameters() lists them in a stable order.
class SequenceEncoder {
 public:
  SequenceEncoder(EncoderConfig config, CatalogInfo catalog);
  virtual ~SequenceEncoder() = default;

  const EncoderConfig& config() const { return config_; }
  const CatalogInfo& catalog() const { return catalog_; }
  int dim() const { return config_.embedding_dim; }

  // B×d states recorded on `tape`.
  autodiff::Var encode(autodiff::Tape& tape, const SequenceBatch& batch, Rng* dropout_rng = nullptr);

  // Values only, no gradient bookkeeping. Safe to call concurrently.
  Matrix infer(const SequenceBatch& batch) const;
  StateVector infer(const std::vector<int>& seq) const;

  virtual std::vector<Parameter*> parameters() = 0;
  std::vector<const Parameter*> parameters() const;
  virtual std::unique_ptr<SequenceEncoder> clone() const = 0;

 protected:
  virtual autodiff::Var forward(autodiff::Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) = 0;

  // Embedding rows for `ids` with optional inverted dropout.
  autodiff::Var embed(autodiff::Tape& tape, Parameter& table, std::span<const int> ids, Rng* dropout_rng) const;

  EncoderConfig config_;
  CatalogInfo catalog_;

 private:
  void validate_batch(const SequenceBatch& batch) const;
};

// Single-layer gated recurrent encoder; the final hidden state is s_t. Pad
// positions leave the hidden state untouched.
class RecurrentEncoder final : public SequenceEncoder {
 public:
  RecurrentEncoder(EncoderConfig config, CatalogInfo catalog, Rng& init_rng);

  std::vector<Parameter*> parameters() override;
  std::unique_ptr<SequenceEncoder> clone() const override;

  Parameter embedding;
  // Gate blocks stacked as [reset; update; candidate].
  Parameter input_weight;
  Parameter input_bias;
  Parameter hidden_weight;
  Parameter hidden_bias;

 protected:
  autodiff::Var forward(autodiff::Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) override;
};

// One causal self-attention block (attention, residual, layer norm,
// position-wise feed-forward, residual, layer norm) over learned positional
// embeddings. Pad positions are zeroed and never attended to; the last
// position's output is s_t.
class SelfAttentionEncoder final : public SequenceEncoder {
 public:
  SelfAttentionEncoder(EncoderConfig config, CatalogInfo catalog, Rng& init_rng);

  std::vector<Parameter*> parameters() override;
  std::unique_ptr<SequenceEncoder> clone() const override;

  Parameter embedding;
  Parameter position;
  Parameter query_weight, query_bias;
  Parameter key_weight, key_bias;
  Parameter value_weight, value_bias;
  Parameter output_weight, output_bias;
  Parameter norm1_gain, norm1_bias;
  Parameter ffn1_weight, ffn1_bias;
  Parameter ffn2_weight, ffn2_bias;
  Parameter norm2_gain, norm2_bias;

 protected:
  autodiff::Var forward(autodiff::Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) override;
};

std::unique_ptr<SequenceEncoder> make_encoder(const EncoderConfig& config, const CatalogInfo& catalog, Rng& init_rng);

// Glorot-uniform rows×cols matrix.
Matrix glorot(int rows, int cols, Rng& rng);

}  // namespace csarec
