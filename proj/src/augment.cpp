// SPDX-License-Identifier: Apache-2.0
#include "csarec/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace csarec {

using autodiff::Tape;
using autodiff::Var;

std::string to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::gaussian:
      return "gaussian";
    case AugmentationKind::uniform:
      return "uniform";
    case AugmentationKind::item_mask:
      return "item_mask";
    case AugmentationKind::dim_dropout:
      return "dim_dropout";
  }
  return "gaussian";
}

AugmentationKind augmentation_kind_from_string(const std::string& s) {
  if (s == "gaussian") return AugmentationKind::gaussian;
  if (s == "uniform") return AugmentationKind::uniform;
  if (s == "item_mask") return AugmentationKind::item_mask;
  if (s == "dim_dropout") return AugmentationKind::dim_dropout;
  throw std::invalid_argument("unknown augmentation kind '" + s + "' (expected gaussian, uniform, item_mask or dim_dropout)");
}

void AugmentationSpec::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("augmentation sigma must be >= 0");
  if (!(alpha >= 0.0) || !(beta >= alpha) || !std::isfinite(beta))
    throw std::invalid_argument("augmentation bounds must satisfy beta >= alpha >= 0");
  if (min_len_T < 1) throw std::invalid_argument("augmentation min_len_T must be >= 1");
  if (!(drop_p >= 0.0 && drop_p < 1.0)) throw std::invalid_argument("augmentation drop_p must lie in [0, 1)");
  if (n < 0) throw std::invalid_argument("augmentation n must be >= 0");
}

StateVector gaussian_noise(const StateVector& s, double sigma, Rng& rng) {
  StateVector out = s;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += noise(rng);
  return out;
}

StateVector uniform_noise(const StateVector& s, double alpha, double beta, Rng& rng) {
  if (beta < alpha) throw std::invalid_argument("uniform_noise requires beta >= alpha");
  StateVector out = s;
  if (alpha == beta) {
    out.array() += alpha;
    return out;
  }
  std::uniform_real_distribution<double> noise(alpha, beta);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += noise(rng);
  return out;
}

std::vector<int> mask_one_item(const std::vector<int>& seq, int true_len, int T, int mask_id, Rng& rng) {
  std::vector<int> out = seq;
  const int len = static_cast<int>(seq.size());
  if (true_len <= T || true_len <= 0) return out;
  if (true_len > len) throw std::invalid_argument("mask_one_item: true_len exceeds sequence length");
  // Windows are left-padded, so real items occupy the tail.
  std::uniform_int_distribution<int> pick(len - true_len, len - 1);
  out[static_cast<std::size_t>(pick(rng))] = mask_id;
  return out;
}

StateVector dim_dropout(const StateVector& s, double p, Rng& rng) {
  StateVector out = s;
  if (p == 0.0) return out;
  std::bernoulli_distribution drop(p);
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (drop(rng)) out(i) = 0.0;
  return out;
}

std::vector<AugmentedView> make_views(const std::vector<int>& seq, const StateVector& s, const AugmentationSpec& spec,
                                      const SequenceEncoder& encoder, Rng& rng) {
  spec.validate();
  std::vector<AugmentedView> views;
  views.reserve(static_cast<std::size_t>(spec.n));
  const CatalogInfo& cat = encoder.catalog();
  for (int j = 0; j < spec.n; ++j) {
    switch (spec.kind) {
      case AugmentationKind::gaussian:
        views.push_back({gaussian_noise(s, spec.sigma, rng), ViewSource::direct_perturbation});
        break;
      case AugmentationKind::uniform:
        views.push_back({uniform_noise(s, spec.alpha, spec.beta, rng), ViewSource::direct_perturbation});
        break;
      case AugmentationKind::dim_dropout:
        views.push_back({dim_dropout(s, spec.drop_p, rng), ViewSource::direct_perturbation});
        break;
      case AugmentationKind::item_mask: {
        auto masked = mask_one_item(seq, true_length(seq, cat.pad_id()), spec.min_len_T, cat.mask_id(), rng);
        views.push_back({encoder.infer(masked), ViewSource::reencoded_masked_sequence});
        break;
      }
    }
  }
  return views;
}

BatchView draw_batch_view(const AugmentationSpec& spec, const SequenceBatch& seqs, int dim, int pad_id, int mask_id,
                          Rng& rng) {
  const int rows = seqs.rows();
  BatchView view;
  if (spec.kind == AugmentationKind::item_mask) {
    view.masked.length = seqs.length;
    view.masked.ids.reserve(seqs.ids.size());
    for (int r = 0; r < rows; ++r) {
      std::vector<int> seq(seqs.ids.begin() + static_cast<std::ptrdiff_t>(r) * seqs.length,
                           seqs.ids.begin() + static_cast<std::ptrdiff_t>(r + 1) * seqs.length);
      auto masked = mask_one_item(seq, true_length(seq, pad_id), spec.min_len_T, mask_id, rng);
      view.masked.ids.insert(view.masked.ids.end(), masked.begin(), masked.end());
    }
    return view;
  }
  // Each row is drawn as its own state so the batch matches per-state calls.
  const StateVector zeros = StateVector::Zero(dim);
  const StateVector ones = StateVector::Ones(dim);
  view.perturbation.resize(rows, dim);
  for (int r = 0; r < rows; ++r) {
    switch (spec.kind) {
      case AugmentationKind::gaussian:
        view.perturbation.row(r) = gaussian_noise(zeros, spec.sigma, rng).transpose();
        break;
      case AugmentationKind::uniform:
        view.perturbation.row(r) = uniform_noise(zeros, spec.alpha, spec.beta, rng).transpose();
        break;
      case AugmentationKind::dim_dropout:
        view.perturbation.row(r) = dim_dropout(ones, spec.drop_p, rng).transpose();
        break;
      case AugmentationKind::item_mask:
        break;
    }
  }
  return view;
}

Var apply_view(Tape& tape, const AugmentationSpec& spec, const BatchView& view, const Var& states,
               SequenceEncoder& encoder) {
  switch (spec.kind) {
    case AugmentationKind::gaussian:
    case AugmentationKind::uniform:
      return autodiff::add(states, tape.constant(view.perturbation));
    case AugmentationKind::dim_dropout:
      return autodiff::mul(states, tape.constant(view.perturbation));
    case AugmentationKind::item_mask:
      return encoder.encode(tape, view.masked);
  }
  throw std::invalid_argument("unknown augmentation kind");
}

Matrix apply_view_values(const AugmentationSpec& spec, const BatchView& view, const Matrix& states,
                         const SequenceEncoder& encoder) {
  switch (spec.kind) {
    case AugmentationKind::gaussian:
    case AugmentationKind::uniform:
      return states + view.perturbation;
    case AugmentationKind::dim_dropout:
      return states.cwiseProduct(view.perturbation);
    case AugmentationKind::item_mask:
      return encoder.infer(view.masked);
  }
  throw std::invalid_argument("unknown augmentation kind");
}

}  // namespace csarec
