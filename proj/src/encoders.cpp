// SPDX-License-Identifier: Apache-2.0
#include "csarec/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace csarec {

using autodiff::Tape;
using autodiff::Var;

std::string to_string(EncoderKind k) { return k == EncoderKind::recurrent ? "recurrent" : "self_attention"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "recurrent" || s == "gru") return EncoderKind::recurrent;
  if (s == "self_attention" || s == "sasrec") return EncoderKind::self_attention;
  throw std::invalid_argument("unknown encoder kind '" + s + "'");
}

void EncoderConfig::validate() const {
  if (embedding_dim <= 0) throw std::invalid_argument("encoder embedding_dim must be positive");
  if (max_len <= 0) throw std::invalid_argument("encoder max_len must be positive");
  if (attention_heads <= 0 || embedding_dim % attention_heads != 0)
    throw std::invalid_argument("encoder attention_heads must divide embedding_dim");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder dropout must lie in [0, 1)");
}

SequenceBatch SequenceBatch::from_rows(const std::vector<std::vector<int>>& rows) {
  SequenceBatch b;
  if (rows.empty()) return b;
  b.length = static_cast<int>(rows.front().size());
  b.ids.reserve(rows.size() * rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != b.length)
      throw std::invalid_argument("ragged sequence batch: row " + std::to_string(r) + " has length " +
                                  std::to_string(rows[r].size()) + ", expected " + std::to_string(b.length));
    b.ids.insert(b.ids.end(), rows[r].begin(), rows[r].end());
  }
  return b;
}

SequenceBatch SequenceBatch::single(const std::vector<int>& seq) { return from_rows({seq}); }

Matrix glorot(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

namespace {

Matrix normal_matrix(int rows, int cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

Matrix uniform_matrix(int rows, int cols, double limit, Rng& rng) {
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

constexpr double kEmbeddingStddev = 0.1;

}  // namespace

// ---- base --------------------------------------------------------------------

SequenceEncoder::SequenceEncoder(EncoderConfig config, CatalogInfo catalog)
    : config_(std::move(config)), catalog_(catalog) {
  config_.validate();
  if (catalog_.num_items <= 0) throw std::invalid_argument("encoder catalogue must be non-empty");
}

void SequenceEncoder::validate_batch(const SequenceBatch& batch) const {
  if (batch.length != config_.max_len)
    throw std::invalid_argument("sequence length " + std::to_string(batch.length) + " does not match encoder max_len " +
                                std::to_string(config_.max_len));
  if (batch.rows() < 1 || batch.ids.size() != static_cast<std::size_t>(batch.rows()) * batch.length)
    throw std::invalid_argument("sequence batch is empty or ragged");
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    const int id = batch.ids[i];
    if (id < 0 || id >= catalog_.vocab_size())
      throw std::out_of_range("item id " + std::to_string(id) + " out of range at row " +
                              std::to_string(i / static_cast<std::size_t>(batch.length)) + ", position " +
                              std::to_string(i % static_cast<std::size_t>(batch.length)));
  }
}

Var SequenceEncoder::encode(Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) {
  validate_batch(batch);
  return forward(tape, batch, dropout_rng);
}

Matrix SequenceEncoder::infer(const SequenceBatch& batch) const {
  Tape tape(/*recording=*/false);
  // A non-recording tape only reads parameter values.
  return const_cast<SequenceEncoder*>(this)->encode(tape, batch, nullptr).value();
}

StateVector SequenceEncoder::infer(const std::vector<int>& seq) const {
  return infer(SequenceBatch::single(seq)).row(0).transpose();
}

std::vector<const Parameter*> SequenceEncoder::parameters() const {
  auto ps = const_cast<SequenceEncoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Var SequenceEncoder::embed(Tape& tape, Parameter& table, std::span<const int> ids, Rng* dropout_rng) const {
  Var x = autodiff::gather_rows(tape.parameter(table), ids);
  if (dropout_rng != nullptr && config_.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - config_.dropout);
    Matrix m(x.rows(), x.cols());
    const double s = 1.0 / (1.0 - config_.dropout);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = keep(*dropout_rng) ? s : 0.0;
    x = autodiff::mul(x, tape.constant(std::move(m)));
  }
  return x;
}

// ---- recurrent -----------------------------------------------------------------

RecurrentEncoder::RecurrentEncoder(EncoderConfig config, CatalogInfo catalog, Rng& init_rng)
    : SequenceEncoder(std::move(config), catalog) {
  const int d = config_.embedding_dim;
  const double limit = 1.0 / std::sqrt(static_cast<double>(d));
  embedding = Parameter("encoder.embedding", normal_matrix(catalog_.vocab_size(), d, kEmbeddingStddev, init_rng));
  input_weight = Parameter("encoder.gru.input_weight", uniform_matrix(3 * d, d, limit, init_rng));
  input_bias = Parameter("encoder.gru.input_bias", uniform_matrix(1, 3 * d, limit, init_rng));
  hidden_weight = Parameter("encoder.gru.hidden_weight", uniform_matrix(3 * d, d, limit, init_rng));
  hidden_bias = Parameter("encoder.gru.hidden_bias", uniform_matrix(1, 3 * d, limit, init_rng));
}

std::vector<Parameter*> RecurrentEncoder::parameters() {
  return {&embedding, &input_weight, &input_bias, &hidden_weight, &hidden_bias};
}

std::unique_ptr<SequenceEncoder> RecurrentEncoder::clone() const { return std::make_unique<RecurrentEncoder>(*this); }

Var RecurrentEncoder::forward(Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) {
  using namespace autodiff;
  const int b = batch.rows();
  const int len = batch.length;
  const int d = config_.embedding_dim;
  const int pad = catalog_.pad_id();

  // Time-major ids so each step reads a contiguous row block.
  std::vector<int> ids(static_cast<std::size_t>(b) * len);
  for (int t = 0; t < len; ++t)
    for (int r = 0; r < b; ++r) ids[static_cast<std::size_t>(t) * b + r] = batch.at(r, t);

  Var x = embed(tape, embedding, ids, dropout_rng);
  Var gi_all = add_row(matmul_nt(x, tape.parameter(input_weight)), tape.parameter(input_bias));
  Var wh = tape.parameter(hidden_weight);
  Var bh = tape.parameter(hidden_bias);

  Var h = tape.constant(Matrix::Zero(b, d));
  for (int t = 0; t < len; ++t) {
    Vector active(b);
    for (int r = 0; r < b; ++r) active(r) = batch.at(r, t) == pad ? 0.0 : 1.0;
    if (active.sum() == 0.0) continue;
    h = gru_cell(gi_all, static_cast<Eigen::Index>(t) * b, h, wh, bh, active);
  }
  return h;
}

// ---- self-attention --------------------------------------------------------------

SelfAttentionEncoder::SelfAttentionEncoder(EncoderConfig config, CatalogInfo catalog, Rng& init_rng)
    : SequenceEncoder(std::move(config), catalog) {
  const int d = config_.embedding_dim;
  const int len = config_.max_len;
  embedding = Parameter("encoder.embedding", normal_matrix(catalog_.vocab_size(), d, kEmbeddingStddev, init_rng));
  position = Parameter("encoder.position", normal_matrix(len, d, kEmbeddingStddev, init_rng));
  query_weight = Parameter("encoder.attn.query_weight", glorot(d, d, init_rng));
  query_bias = Parameter("encoder.attn.query_bias", Matrix::Zero(1, d));
  key_weight = Parameter("encoder.attn.key_weight", glorot(d, d, init_rng));
  key_bias = Parameter("encoder.attn.key_bias", Matrix::Zero(1, d));
  value_weight = Parameter("encoder.attn.value_weight", glorot(d, d, init_rng));
  value_bias = Parameter("encoder.attn.value_bias", Matrix::Zero(1, d));
  output_weight = Parameter("encoder.attn.output_weight", glorot(d, d, init_rng));
  output_bias = Parameter("encoder.attn.output_bias", Matrix::Zero(1, d));
  norm1_gain = Parameter("encoder.norm1.gain", Matrix::Ones(1, d));
  norm1_bias = Parameter("encoder.norm1.bias", Matrix::Zero(1, d));
  ffn1_weight = Parameter("encoder.ffn1.weight", glorot(d, d, init_rng));
  ffn1_bias = Parameter("encoder.ffn1.bias", Matrix::Zero(1, d));
  ffn2_weight = Parameter("encoder.ffn2.weight", glorot(d, d, init_rng));
  ffn2_bias = Parameter("encoder.ffn2.bias", Matrix::Zero(1, d));
  norm2_gain = Parameter("encoder.norm2.gain", Matrix::Ones(1, d));
  norm2_bias = Parameter("encoder.norm2.bias", Matrix::Zero(1, d));
}

std::vector<Parameter*> SelfAttentionEncoder::parameters() {
  return {&embedding,    &position,    &query_weight, &query_bias,  &key_weight, &key_bias,
          &value_weight, &value_bias,  &output_weight, &output_bias, &norm1_gain, &norm1_bias,
          &ffn1_weight,  &ffn1_bias,   &ffn2_weight,  &ffn2_bias,   &norm2_gain, &norm2_bias};
}

std::unique_ptr<SequenceEncoder> SelfAttentionEncoder::clone() const {
  return std::make_unique<SelfAttentionEncoder>(*this);
}

Var SelfAttentionEncoder::forward(Tape& tape, const SequenceBatch& batch, Rng* dropout_rng) {
  using namespace autodiff;
  const int b = batch.rows();
  const int len = batch.length;
  const int pad = catalog_.pad_id();

  std::vector<int> positions(batch.ids.size());
  std::vector<unsigned char> valid(batch.ids.size());
  Vector valid_w(static_cast<Eigen::Index>(batch.ids.size()));
  std::vector<int> last(static_cast<std::size_t>(b));
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    positions[i] = static_cast<int>(i % static_cast<std::size_t>(len));
    valid[i] = batch.ids[i] != pad;
    valid_w(static_cast<Eigen::Index>(i)) = valid[i] ? 1.0 : 0.0;
  }
  for (int r = 0; r < b; ++r) last[static_cast<std::size_t>(r)] = r * len + len - 1;

  Var x = add(embed(tape, embedding, batch.ids, dropout_rng), gather_rows(tape.parameter(position), positions));
  x = scale_rows(x, valid_w);

  auto linear = [&](const Var& in, Parameter& w, Parameter& bias) {
    return add_row(matmul_nt(in, tape.parameter(w)), tape.parameter(bias));
  };
  Var q = linear(x, query_weight, query_bias);
  Var k = linear(x, key_weight, key_bias);
  Var v = linear(x, value_weight, value_bias);
  Var attn = causal_attention(q, k, v, b, len, config_.attention_heads, valid);
  Var h1 = layer_norm(add(x, linear(attn, output_weight, output_bias)), tape.parameter(norm1_gain),
                      tape.parameter(norm1_bias));
  Var ffn = linear(relu(linear(h1, ffn1_weight, ffn1_bias)), ffn2_weight, ffn2_bias);
  Var h2 = layer_norm(add(h1, ffn), tape.parameter(norm2_gain), tape.parameter(norm2_bias));
  return gather_rows(h2, last);
}

std::unique_ptr<SequenceEncoder> make_encoder(const EncoderConfig& config, const CatalogInfo& catalog, Rng& init_rng) {
  switch (config.kind) {
    case EncoderKind::recurrent:
      return std::make_unique<RecurrentEncoder>(config, catalog, init_rng);
    case EncoderKind::self_attention:
      return std::make_unique<SelfAttentionEncoder>(config, catalog, init_rng);
  }
  throw std::invalid_argument("unknown encoder kind");
}

}  // namespace csarec
