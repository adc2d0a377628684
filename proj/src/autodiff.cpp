// SPDX-License-Identifier: Apache-2.0
#include "csarec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace csarec::autodiff {

namespace {

// Tape nodes are short-lived matrices of a few hundred KB. With glibc's
// default thresholds each one is a fresh mmap and every step pays the page
// faults again, which costs more than the arithmetic.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)done;
#endif
}

using Packet = Eigen::internal::packet_traits<double>::type;
constexpr Eigen::Index kLanes = Eigen::internal::packet_traits<double>::size;

// Every output entry is a zero-started chain of fused multiply-adds over k in
// order, whichever lane layout computes it, so how rows and columns are
// grouped never changes a value.

// Lanes are rows: P packets of rows by J columns of w per register tile.
template <int P, int J>
Eigen::Index row_lane_tiles(const double* x, Eigen::Index ldx, Eigen::Index k_dim, const double* w, Eigen::Index n,
                            double* out, Eigen::Index ldo, Eigen::Index j) {
  using namespace Eigen::internal;
  for (; j + J <= n; j += J) {
    Packet acc[P][J];
#pragma GCC unroll 8
    for (int p = 0; p < P; ++p)
#pragma GCC unroll 8
      for (int c = 0; c < J; ++c) acc[p][c] = pset1<Packet>(0.0);
    for (Eigen::Index k = 0; k < k_dim; ++k) {
      Packet xv[P];
#pragma GCC unroll 8
      for (int p = 0; p < P; ++p) xv[p] = ploadu<Packet>(x + k * ldx + p * kLanes);
      const double* wk = w + j + k * n;
#pragma GCC unroll 8
      for (int c = 0; c < J; ++c) {
        const Packet wv = pset1<Packet>(wk[c]);
#pragma GCC unroll 8
        for (int p = 0; p < P; ++p) acc[p][c] = pmadd(xv[p], wv, acc[p][c]);
      }
    }
#pragma GCC unroll 8
    for (int c = 0; c < J; ++c)
#pragma GCC unroll 8
      for (int p = 0; p < P; ++p) pstoreu(out + (j + c) * ldo + p * kLanes, acc[p][c]);
  }
  return j;
}

template <int P>
void row_lane_block(const double* x, Eigen::Index ldx, Eigen::Index k_dim, const double* w, Eigen::Index n,
                    double* out, Eigen::Index ldo) {
  Eigen::Index j = row_lane_tiles<P, 8>(x, ldx, k_dim, w, n, out, ldo, 0);
  j = row_lane_tiles<P, 4>(x, ldx, k_dim, w, n, out, ldo, j);
  row_lane_tiles<P, 1>(x, ldx, k_dim, w, n, out, ldo, j);
}

// Lanes are columns of w: one row of x against Q packets of columns. `w` is
// column-major with leading dimension ldw and at least Q * kLanes columns
// readable from j.
template <int Q>
void col_lane_tile(const double* x, Eigen::Index ldx, Eigen::Index k_dim, const double* w, Eigen::Index ldw,
                   double* acc_out) {
  using namespace Eigen::internal;
  Packet acc[Q];
#pragma GCC unroll 8
  for (int q = 0; q < Q; ++q) acc[q] = pset1<Packet>(0.0);
  for (Eigen::Index k = 0; k < k_dim; ++k) {
    const Packet xv = pset1<Packet>(x[k * ldx]);
#pragma GCC unroll 8
    for (int q = 0; q < Q; ++q) acc[q] = pmadd(xv, ploadu<Packet>(w + k * ldw + q * kLanes), acc[q]);
  }
#pragma GCC unroll 8
  for (int q = 0; q < Q; ++q) pstoreu(acc_out + q * kLanes, acc[q]);
}

// Rows [r0, b) of the product, one row at a time with columns in lanes.
void col_lane_rows(const Matrix& x, const Matrix& w, Eigen::Index r0, Matrix& out) {
  const Eigen::Index b = x.rows(), k = x.cols(), n = w.rows();
  const Eigen::Index full = n / kLanes * kLanes;
  Matrix tail;
  if (full < n) {
    tail = Matrix::Zero(kLanes, k);
    tail.topRows(n - full) = w.bottomRows(n - full);
  }
  double buf[4 * kLanes];
  for (Eigen::Index i = r0; i < b; ++i) {
    const double* xi = x.data() + i;
    Eigen::Index j = 0;
    for (; j + 4 * kLanes <= full; j += 4 * kLanes) {
      col_lane_tile<4>(xi, b, k, w.data() + j, n, buf);
      for (Eigen::Index c = 0; c < 4 * kLanes; ++c) out(i, j + c) = buf[c];
    }
    for (; j < full; j += kLanes) {
      col_lane_tile<1>(xi, b, k, w.data() + j, n, buf);
      for (Eigen::Index c = 0; c < kLanes; ++c) out(i, j + c) = buf[c];
    }
    if (full < n) {
      col_lane_tile<1>(xi, b, k, tail.data(), kLanes, buf);
      for (Eigen::Index c = 0; c < n - full; ++c) out(i, full + c) = buf[c];
    }
  }
}

}  // namespace

Matrix product_nt(const Matrix& x, const Matrix& w) {
  if (x.cols() != w.cols()) throw std::invalid_argument("autodiff: shape mismatch in product_nt");
  const Eigen::Index b = x.rows(), k = x.cols(), n = w.rows();
  Matrix out(b, n);
  const Eigen::Index full = b / kLanes * kLanes;
  Eigen::Index i = 0;
  for (; i + 3 * kLanes <= full; i += 3 * kLanes) row_lane_block<3>(x.data() + i, b, k, w.data(), n, out.data() + i, b);
  for (; i < full; i += kLanes) row_lane_block<1>(x.data() + i, b, k, w.data(), n, out.data() + i, b);
  if (i < b) col_lane_rows(x, w, i, out);
  return out;
}

Matrix exp_packet(const Matrix& x) {
  using namespace Eigen::internal;
  Matrix out(x.rows(), x.cols());
  const Eigen::Index n = x.size();
  const double* src = x.data();
  double* dst = out.data();
  Eigen::Index i = 0;
  for (; i + kLanes <= n; i += kLanes) pstoreu(dst + i, pexp(ploadu<Packet>(src + i)));
  if (i < n) {
    double buf[kLanes] = {};
    std::copy(src + i, src + n, buf);
    pstoreu(buf, pexp(ploadu<Packet>(buf)));
    std::copy(buf, buf + (n - i), dst + i);
  }
  return out;
}

Matrix sigmoid_values(const Matrix& x) { return (1.0 / (1.0 + exp_packet(-x).array())).matrix(); }

// 1 - 2/(exp(2x)+1) vectorises; std::tanh on doubles does not.
Matrix tanh_values(const Matrix& x) { return (1.0 - 2.0 / (exp_packet(2.0 * x).array() + 1.0)).matrix(); }

Tape::Tape(bool recording) : recording_(recording) { tune_allocator(); }

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non-scalar node");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = recording_;
  n.param = recording_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw std::logic_error("autodiff: mixing vars from different tapes");
      n.requires_grad = n.requires_grad || requires_grad(in.id());
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& root) {
  if (!recording_) throw std::logic_error("autodiff: backward on a non-recording tape");
  if (root.tape() != this) throw std::logic_error("autodiff: root belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("autodiff: backward root must be scalar");
  if (!requires_grad(root.id())) return;

  accumulate(root.id(), Matrix::Ones(1, 1));
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad, n.value);
    if (n.param != nullptr) n.param->grad += n.grad;
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: shape mismatch in matmul");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("autodiff: shape mismatch in matmul_nt");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(product_nt(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(const Var& a, double c) {
  const int ia = a.id();
  return a.tape()->record(a.value() * c, {a}, [ia, c](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(ia, g * c); });
}

Var add_scalar(const Var& a, double c) {
  const int ia = a.id();
  return a.tape()->record((a.value().array() + c).matrix(), {a},
                          [ia](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(ia, g); });
}

Var add_row(const Var& x, const Var& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw std::invalid_argument("autodiff: shape mismatch in add_row");
  const int ix = x.id(), ib = b.id();
  Matrix out = x.value();
  out.rowwise() += b.value().row(0);
  return x.tape()->record(std::move(out), {x, b}, [ix, ib](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

Var scale_rows(const Var& x, const Vector& w) {
  if (w.size() != x.rows()) throw std::invalid_argument("autodiff: shape mismatch in scale_rows");
  const int ix = x.id();
  Matrix out = w.asDiagonal() * x.value();
  return x.tape()->record(std::move(out), {x},
                          [ix, w](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(ix, w.asDiagonal() * g); });
}

Var sigmoid(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(sigmoid_values(x.value()), {x}, [ix](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(ix, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var tanh(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(tanh_values(x.value()), {x}, [ix](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(ix, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(x.value().cwiseMax(0.0), {x}, [ix](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, (tp.value(ix).array() > 0.0).select(g, 0.0));
  });
}

Var square(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(x.value().array().square().matrix(), {x}, [ix](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, (2.0 * g.array() * tp.value(ix).array()).matrix());
  });
}

Var neg_log_sigmoid(const Var& x) {
  const int ix = x.id();
  Matrix out = x.value().unaryExpr([](double v) {
    // softplus(-v)
    return v >= 0.0 ? std::log1p(std::exp(-v)) : -v + std::log1p(std::exp(v));
  });
  return x.tape()->record(std::move(out), {x}, [ix](Tape& tp, const Matrix& g, const Matrix&) {
    // d/dv softplus(-v) = -sigmoid(-v)
    Matrix d = tp.value(ix).unaryExpr([](double v) { return -1.0 / (1.0 + std::exp(v)); });
    tp.accumulate(ix, g.cwiseProduct(d));
  });
}

Var sum(const Var& x) {
  const int ix = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x},
                          [ix, r, c](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(ix, Matrix::Constant(r, c, g(0, 0))); });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("autodiff: mean of empty matrix");
  return scale(sum(x), 1.0 / n);
}

Var row_sum(const Var& x) {
  const int ix = x.id();
  const Eigen::Index c = x.cols();
  return x.tape()->record(x.value().rowwise().sum(), {x}, [ix, c](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, g.replicate(1, c));
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw std::out_of_range("autodiff: gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  const int ix = x.id();
  const Eigen::Index r = xv.rows();
  std::vector<int> idx(rows.begin(), rows.end());
  return x.tape()->record(std::move(out), {x}, [ix, r, idx = std::move(idx)](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix gx = Matrix::Zero(r, g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ix, gx);
  });
}

Var row_block(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw std::out_of_range("autodiff: row_block out of range");
  const int ix = x.id();
  return x.tape()->record(x.value().middleRows(start, count), {x}, [ix, start](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_block(ix, start, 0, g);
  });
}

Var col_block(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw std::out_of_range("autodiff: col_block out of range");
  const int ix = x.id();
  return x.tape()->record(x.value().middleCols(start, count), {x}, [ix, start](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_block(ix, 0, start, g);
  });
}

Var pick(const Var& x, std::span<const int> cols) {
  const Matrix& xv = x.value();
  if (static_cast<Eigen::Index>(cols.size()) != xv.rows()) throw std::invalid_argument("autodiff: pick size mismatch");
  Matrix out(xv.rows(), 1);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= xv.cols()) throw std::out_of_range("autodiff: pick index out of range");
    out(i, 0) = xv(i, c);
  }
  const int ix = x.id();
  const Eigen::Index r = xv.rows(), cc = xv.cols();
  std::vector<int> idx(cols.begin(), cols.end());
  return x.tape()->record(std::move(out), {x}, [ix, r, cc, idx = std::move(idx)](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix gx = Matrix::Zero(r, cc);
    for (Eigen::Index i = 0; i < r; ++i) gx(i, idx[static_cast<std::size_t>(i)]) = g(i, 0);
    tp.accumulate(ix, gx);
  });
}

Var gru_cell(const Var& gi_all, Eigen::Index row, const Var& h, const Var& weight, const Var& bias,
             const Vector& active) {
  const Eigen::Index b = h.rows();
  const Eigen::Index d = h.cols();
  if (gi_all.cols() != 3 * d || row < 0 || row + b > gi_all.rows() || weight.rows() != 3 * d || weight.cols() != d ||
      bias.rows() != 1 || bias.cols() != 3 * d || active.size() != b)
    throw std::invalid_argument("autodiff: shape mismatch in gru_cell");
  const Matrix& hv = h.value();
  Matrix gh = product_nt(hv, weight.value());
  gh.rowwise() += bias.value().row(0);
  const auto gi = gi_all.value().middleRows(row, b);
  const Matrix r = sigmoid_values(gi.leftCols(d) + gh.leftCols(d));
  const Matrix z = sigmoid_values(gi.middleCols(d, d) + gh.middleCols(d, d));
  const Matrix ghn = gh.rightCols(d);
  const Matrix pre_n = gi.rightCols(d) + r.cwiseProduct(ghn);
  const Matrix n = tanh_values(pre_n);
  Matrix out = n + z.cwiseProduct(hv - n);
  for (Eigen::Index i = 0; i < b; ++i)
    if (active(i) == 0.0) out.row(i) = hv.row(i);

  const int igi = gi_all.id(), ih = h.id(), iw = weight.id(), ib = bias.id();
  return h.tape()->record(
      std::move(out), {gi_all, h, weight, bias},
      [igi, ih, iw, ib, row, d, active, r, z, n, ghn](Tape& tp, const Matrix& g, const Matrix&) {
        const Matrix& hv = tp.value(ih);
        const Matrix gm = active.asDiagonal() * g;
        const Matrix dn = gm.cwiseProduct((1.0 - z.array()).matrix());
        const Matrix dz = gm.cwiseProduct(hv - n);
        const Matrix da_n = dn.cwiseProduct((1.0 - n.array().square()).matrix());
        const Matrix da_r = da_n.cwiseProduct(ghn).cwiseProduct((r.array() * (1.0 - r.array())).matrix());
        const Matrix da_z = dz.cwiseProduct((z.array() * (1.0 - z.array())).matrix());
        Matrix dgh(g.rows(), 3 * d);
        dgh << da_r, da_z, da_n.cwiseProduct(r);
        if (tp.requires_grad(igi)) {
          tp.accumulate_block(igi, row, 0, da_r);
          tp.accumulate_block(igi, row, d, da_z);
          tp.accumulate_block(igi, row, 2 * d, da_n);
        }
        if (tp.requires_grad(ih)) {
          Matrix dh = dgh * tp.value(iw);
          dh += gm.cwiseProduct(z);
          dh += g - gm;
          tp.accumulate(ih, dh);
        }
        if (tp.requires_grad(iw)) tp.accumulate(iw, dgh.transpose() * hv);
        if (tp.requires_grad(ib)) tp.accumulate(ib, dgh.colwise().sum());
      });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw std::invalid_argument("autodiff: softmax_cross_entropy target count mismatch");
  Matrix prob(z.rows(), z.cols());
  Matrix out(z.rows(), 1);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= z.cols()) throw std::out_of_range("autodiff: softmax_cross_entropy target out of range");
    const double m = z.row(i).maxCoeff();
    prob.row(i) = (z.row(i).array() - m).exp();
    const double s = prob.row(i).sum();
    prob.row(i) /= s;
    out(i, 0) = m + std::log(s) - z(i, t);
  }
  const int il = logits.id();
  std::vector<int> idx(targets.begin(), targets.end());
  return logits.tape()->record(std::move(out), {logits},
                               [il, prob = std::move(prob), idx = std::move(idx)](Tape& tp, const Matrix& g, const Matrix&) {
                                 Matrix gx = prob;
                                 for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                                   gx(i, idx[static_cast<std::size_t>(i)]) -= 1.0;
                                   gx.row(i) *= g(i, 0);
                                 }
                                 tp.accumulate(il, gx);
                               });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw std::invalid_argument("autodiff: layer_norm parameter shape mismatch");
  Matrix xhat(xv.rows(), n);
  Vector inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Matrix& g, const Matrix&) {
        if (tp.requires_grad(ig)) tp.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
        if (tp.requires_grad(ix)) {
          const Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
          Matrix dx(g.rows(), n);
          const double nn = static_cast<double>(n);
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double s1 = dxhat.row(i).sum();
            const double s2 = dxhat.row(i).dot(xhat.row(i));
            dx.row(i) = (inv_std(i) / nn) * (nn * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
          }
          tp.accumulate(ix, dx);
        }
      });
}

Var causal_attention(const Var& q, const Var& k, const Var& v, int batch, int length, int heads,
                     std::span<const unsigned char> valid) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * length;
  if (qv.rows() != rows || kv.rows() != rows || vv.rows() != rows || kv.cols() != qv.cols())
    throw std::invalid_argument("autodiff: causal_attention shape mismatch");
  if (heads <= 0 || qv.cols() % heads != 0 || vv.cols() % heads != 0)
    throw std::invalid_argument("autodiff: causal_attention heads must divide width");
  if (static_cast<Eigen::Index>(valid.size()) != rows)
    throw std::invalid_argument("autodiff: causal_attention mask size mismatch");

  const Eigen::Index dk = qv.cols() / heads;
  const Eigen::Index dv = vv.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // probs[b * heads + h] is the length×length attention matrix.
  std::vector<Matrix> probs(static_cast<std::size_t>(batch) * heads);
  Matrix out = Matrix::Zero(rows, vv.cols());
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
    for (int h = 0; h < heads; ++h) {
      const auto qb = qv.block(r0, h * dk, length, dk);
      const auto kb = kv.block(r0, h * dk, length, dk);
      Matrix s = (qb * kb.transpose()) * inv_sqrt;
      for (int i = 0; i < length; ++i) {
        double m = neg_inf;
        for (int j = 0; j < length; ++j) {
          if (j > i || !valid[static_cast<std::size_t>(r0 + j)]) s(i, j) = neg_inf;
          m = std::max(m, s(i, j));
        }
        if (m == neg_inf) {
          s.row(i).setZero();
          continue;
        }
        double z = 0.0;
        for (int j = 0; j < length; ++j) {
          s(i, j) = s(i, j) == neg_inf ? 0.0 : std::exp(s(i, j) - m);
          z += s(i, j);
        }
        s.row(i) /= z;
      }
      out.block(r0, h * dv, length, dv) = s * vv.block(r0, h * dv, length, dv);
      probs[static_cast<std::size_t>(b) * heads + h] = std::move(s);
    }
  }

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), {q, k, v},
      [iq, ik, iv, batch, length, heads, dk, dv, inv_sqrt, probs = std::move(probs)](Tape& tp, const Matrix& g, const Matrix&) {
        const Matrix& qv = tp.value(iq);
        const Matrix& kv = tp.value(ik);
        const Matrix& vv = tp.value(iv);
        Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix gv = Matrix::Zero(vv.rows(), vv.cols());
        for (int b = 0; b < batch; ++b) {
          const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
          for (int h = 0; h < heads; ++h) {
            const Matrix& p = probs[static_cast<std::size_t>(b) * heads + h];
            const auto go = g.block(r0, h * dv, length, dv);
            gv.block(r0, h * dv, length, dv) = p.transpose() * go;
            const Matrix gp = go * vv.block(r0, h * dv, length, dv).transpose();
            const Vector dot = gp.cwiseProduct(p).rowwise().sum();
            const Matrix gs = (p.array() * (gp.colwise() - dot).array()).matrix() * inv_sqrt;
            gq.block(r0, h * dk, length, dk) = gs * kv.block(r0, h * dk, length, dk);
            gk.block(r0, h * dk, length, dk) = gs.transpose() * qv.block(r0, h * dk, length, dk);
          }
        }
        tp.accumulate(iq, gq);
        tp.accumulate(ik, gk);
        tp.accumulate(iv, gv);
      });
}

}  // namespace csarec::autodiff
