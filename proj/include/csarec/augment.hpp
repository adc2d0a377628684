// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csarec/autodiff.hpp"
#include "csarec/datasets.hpp"
#include "csarec/encoders.hpp"

#include <string>
#include <vector>

namespace csarec {

enum class AugmentationKind { gaussian, uniform, item_mask, dim_dropout };

std::string to_string(AugmentationKind k);
AugmentationKind augmentation_kind_from_string(const std::string& s);

struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::gaussian;
  double sigma = 0.003;
  double alpha = 0.001;
  double beta = 0.005;
  int min_len_T = 3;
  double drop_p = 0.1;
  int n = 2;

  void validate() const;
  bool operator==(const AugmentationSpec&) const = default;
};

enum class ViewSource { direct_perturbation, reencoded_masked_sequence };

struct AugmentedView {
  StateVector state;
  ViewSource source = ViewSource::direct_perturbation;
};

StateVector gaussian_noise(const StateVector& s, double sigma, Rng& rng);
StateVector uniform_noise(const StateVector& s, double alpha, double beta, Rng& rng);
// Replaces one uniformly chosen non-pad position with mask_id when true_len > T.
std::vector<int> mask_one_item(const std::vector<int>& seq, int true_len, int T, int mask_id, Rng& rng);
// Zeroes each coordinate independently with probability p; no rescaling.
StateVector dim_dropout(const StateVector& s, double p, Rng& rng);

std::vector<AugmentedView> make_views(const std::vector<int>& seq, const StateVector& s, const AugmentationSpec& spec,
                                      const SequenceEncoder& encoder, Rng& rng);

// ---- batched forms used inside a training step -------------------------------

// One pre-drawn view of a whole batch. For direct kinds `perturbation` is
// additive noise (gaussian, uniform) or a 0/1 keep mask (dim_dropout); for
// item_mask `masked` holds the masked sequences to re-encode.
struct BatchView {
  Matrix perturbation;
  SequenceBatch masked;
};

// Draws one view for `states` (rows×dim) whose source sequences are `seqs`.
// Draw order per row matches the single-state functions.
BatchView draw_batch_view(const AugmentationSpec& spec, const SequenceBatch& seqs, int dim, int pad_id, int mask_id,
                          Rng& rng);

// Applies a drawn view on the tape. For item_mask this re-encodes through
// `encoder`, so gradients reach the encoder parameters.
autodiff::Var apply_view(autodiff::Tape& tape, const AugmentationSpec& spec, const BatchView& view,
                         const autodiff::Var& states, SequenceEncoder& encoder);

// Values-only counterpart of apply_view.
Matrix apply_view_values(const AugmentationSpec& spec, const BatchView& view, const Matrix& states,
                         const SequenceEncoder& encoder);

}  // namespace csarec
