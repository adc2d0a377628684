// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace csarec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A named trainable tensor together with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

namespace autodiff {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records a computation graph for reverse-mode differentiation.
//
// Nodes are appended in evaluation order, so a reverse sweep visits every node
// after all of its consumers. A tape created with recording=false evaluates
// values only; backward closures are dropped and backward() is an error.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out)>;

  explicit Tape(bool recording = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  // Appends an op node. `inputs` decides whether the node needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Adds `g` into the gradient of node `id`; ignored for nodes without gradient.
  template <class Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.has_grad) {
      n.grad += g;
    } else {
      n.grad = g;
      n.has_grad = true;
    }
  }

  // Adds `g` into the block of node `id`'s gradient starting at (row, col).
  template <class Derived>
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  // Seeds d(root)/d(root) = 1 and propagates into Parameter::grad of every
  // reachable parameter. The root must be 1x1.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  bool recording_;
};

// ---- batch-invariant kernels ----------------------------------------------
// Each output entry goes through the same instruction sequence whatever the
// matrix size, so a row's result never depends on the rows batched with it.

// x * w^T, accumulated over the shared dimension in order.
Matrix product_nt(const Matrix& x, const Matrix& w);
// Elementwise exp through the vector kernel, tail included.
Matrix exp_packet(const Matrix& x);
Matrix sigmoid_values(const Matrix& x);
Matrix tanh_values(const Matrix& x);

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
// x + 1·b where b is a 1×n row.
Var add_row(const Var& x, const Var& b);
// Row i multiplied by w[i]; w is a constant.
Var scale_rows(const Var& x, const Vector& w);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);
// Elementwise -log(sigmoid(x)), evaluated as softplus(-x).
Var neg_log_sigmoid(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
// Row-wise sum, n×m -> n×1.
Var row_sum(const Var& x);

// Rows of x selected by index (duplicates allowed). Backward scatter-adds.
Var gather_rows(const Var& x, std::span<const int> rows);
Var row_block(const Var& x, Eigen::Index start, Eigen::Index count);
Var col_block(const Var& x, Eigen::Index start, Eigen::Index count);
// out[i] = x(i, cols[i]); n×m -> n×1.
Var pick(const Var& x, std::span<const int> cols);

// Per-row -log softmax(logits)[target]; n×m -> n×1.
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);

// Row-wise layer normalisation with learned gain and bias (both 1×n).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-8);

// One gated recurrent step. `gi_all` holds precomputed input projections
// (gate blocks [reset, update, candidate], bias included); rows
// [row, row + h.rows()) belong to this step. Rows with active[i] == 0 pass
// h through unchanged.
//   r = sigmoid(gi_r + gh_r), z = sigmoid(gi_z + gh_z), gh = h W^T + b
//   n = tanh(gi_n + r * gh_n),  h' = (1 - z) * n + z * h
Var gru_cell(const Var& gi_all, Eigen::Index row, const Var& h, const Var& weight, const Var& bias,
             const Vector& active);

// Scaled dot-product self-attention over `batch` sequences of `length` rows
// each (row b*length + t). Query t attends to keys j <= t with valid[j]
// non-zero. Columns are split evenly across `heads`. Queries with no visible
// key produce a zero row.
Var causal_attention(const Var& q, const Var& k, const Var& v, int batch, int length, int heads,
                     std::span<const unsigned char> valid);

}  // namespace autodiff
}  // namespace csarec
