// SPDX-License-Identifier: Apache-2.0
#include "csarec/augment.hpp"
#include "csarec/encoders.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace csarec;

namespace {

constexpr int kDraws = 10000;
constexpr int kDim = 64;

StateVector random_state(int d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  StateVector s(d);
  for (int i = 0; i < d; ++i) s(i) = n(rng);
  return s;
}

std::unique_ptr<SequenceEncoder> small_encoder(EncoderKind kind = EncoderKind::recurrent) {
  EncoderConfig c;
  c.embedding_dim = 8;
  c.max_len = 6;
  c.kind = kind;
  Rng rng(3);
  return make_encoder(c, CatalogInfo{10}, rng);
}

}  // namespace

TEST(GaussianNoise, ZeroSigmaIsIdentity) {
  const StateVector s = random_state(kDim, 1);
  Rng rng(0);
  EXPECT_EQ(gaussian_noise(s, 0.0, rng), s);
}

TEST(GaussianNoise, MomentsMatch) {
  const double sigma = 0.003;
  const StateVector zero = StateVector::Zero(kDim);
  Rng rng(11);
  Matrix draws(kDraws, kDim);
  for (int i = 0; i < kDraws; ++i) draws.row(i) = gaussian_noise(zero, sigma, rng).transpose();
  const double mean_bound = 4.0 * sigma / std::sqrt(static_cast<double>(kDraws));
  for (int c = 0; c < kDim; ++c) {
    const double mean = draws.col(c).mean();
    const double var = (draws.col(c).array() - mean).square().sum() / (kDraws - 1);
    EXPECT_LT(std::abs(mean), mean_bound) << "coordinate " << c;
    EXPECT_LT(std::abs(var / (sigma * sigma) - 1.0), 0.1) << "coordinate " << c;
  }
}

TEST(GaussianNoise, SameRngStateSameOutput) {
  const StateVector s = random_state(kDim, 2);
  Rng a(5), b(5);
  EXPECT_EQ(gaussian_noise(s, 0.003, a), gaussian_noise(s, 0.003, b));
}

TEST(UniformNoise, DegenerateRangeAddsConstant) {
  const StateVector s = random_state(kDim, 3);
  Rng rng(0);
  const StateVector out = uniform_noise(s, 0.002, 0.002, rng);
  for (int i = 0; i < kDim; ++i) EXPECT_EQ(out(i), s(i) + 0.002);
}

TEST(UniformNoise, SupportAndMean) {
  const double alpha = 0.001, beta = 0.005;
  const StateVector zero = StateVector::Zero(kDim);
  Rng rng(12);
  double sum = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const StateVector e = uniform_noise(zero, alpha, beta, rng);
    EXPECT_GE(e.minCoeff(), alpha);
    EXPECT_LE(e.maxCoeff(), beta);
    sum += e.sum();
  }
  const double n = static_cast<double>(kDraws) * kDim;
  const double se = (beta - alpha) / std::sqrt(12.0) / std::sqrt(n);
  EXPECT_LT(std::abs(sum / n - 0.003), 4.0 * se);
  // Per-coordinate mean over the 10k draws, bound 4 standard errors.
  Rng rng2(13);
  Vector coord_sum = Vector::Zero(kDim);
  for (int i = 0; i < kDraws; ++i) coord_sum += uniform_noise(zero, alpha, beta, rng2);
  const double se_coord = (beta - alpha) / std::sqrt(12.0) / std::sqrt(static_cast<double>(kDraws));
  for (int c = 0; c < kDim; ++c) EXPECT_LT(std::abs(coord_sum(c) / kDraws - 0.003), 4.0 * se_coord);
}

TEST(UniformNoise, RejectsInvertedBounds) {
  Rng rng(0);
  EXPECT_THROW(uniform_noise(StateVector::Zero(4), 0.5, 0.1, rng), std::invalid_argument);
}

TEST(MaskOneItem, StrictLengthThreshold) {
  const int pad = 10, mask = 11;
  Rng rng(0);
  const std::vector<int> three{pad, pad, 1, 2, 3};
  EXPECT_EQ(mask_one_item(three, 3, 3, mask, rng), three);
  const std::vector<int> four{pad, 4, 1, 2, 3};
  for (int trial = 0; trial < 100; ++trial) {
    const auto out = mask_one_item(four, 4, 3, mask, rng);
    int changed = 0;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i] != four[i]) {
        ++changed;
        EXPECT_EQ(out[i], mask);
        EXPECT_GE(i, 1u);
      }
    EXPECT_EQ(changed, 1);
  }
}

TEST(MaskOneItem, PositionsAreUniform) {
  const std::vector<int> seq{7, 8, 9, 6};
  Rng rng(21);
  std::array<int, 4> counts{};
  for (int i = 0; i < kDraws; ++i) {
    const auto out = mask_one_item(seq, 4, 3, 99, rng);
    for (int p = 0; p < 4; ++p) counts[p] += out[p] == 99;
  }
  const double bound = 4.0 * std::sqrt(kDraws * 0.25 * 0.75);
  for (int p = 0; p < 4; ++p) EXPECT_LT(std::abs(counts[p] - 2500.0), bound) << "position " << p;
}

TEST(MaskOneItem, DoesNotMutateInput) {
  const std::vector<int> seq{1, 2, 3, 4, 5};
  const auto copy = seq;
  Rng rng(0);
  (void)mask_one_item(seq, 5, 3, 99, rng);
  EXPECT_EQ(seq, copy);
}

TEST(DimDropout, ZeroProbabilityIsIdentity) {
  const StateVector s = random_state(kDim, 4);
  Rng rng(0);
  EXPECT_EQ(dim_dropout(s, 0.0, rng), s);
}

TEST(DimDropout, SupportAndZeroedCount) {
  const double p = 0.1;
  const StateVector s = random_state(kDim, 5);
  Rng rng(31);
  double zeroed = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const StateVector out = dim_dropout(s, p, rng);
    for (int c = 0; c < kDim; ++c) {
      EXPECT_TRUE(out(c) == 0.0 || out(c) == s(c));
      zeroed += out(c) == 0.0;
    }
  }
  const double mean = zeroed / kDraws;
  const double bound = 4.0 * std::sqrt(kDim * p * (1.0 - p)) / std::sqrt(static_cast<double>(kDraws));
  EXPECT_LT(std::abs(mean - kDim * p), bound);
}

TEST(MakeViews, CountsAndIdentityCases) {
  auto enc = small_encoder();
  const std::vector<int> seq{10, 10, 1, 2, 3, 4};
  const StateVector s = enc->infer(seq);
  Rng rng(0);
  AugmentationSpec spec;
  spec.n = 0;
  EXPECT_TRUE(make_views(seq, s, spec, *enc, rng).empty());
  spec.n = 3;
  spec.sigma = 0.0;
  const auto views = make_views(seq, s, spec, *enc, rng);
  ASSERT_EQ(views.size(), 3u);
  for (const auto& v : views) {
    EXPECT_EQ(v.state, s);
    EXPECT_EQ(v.source, ViewSource::direct_perturbation);
  }
  EXPECT_EQ(AugmentationSpec{}.n, 2);
}

TEST(MakeViews, ItemMaskReencodes) {
  auto enc = small_encoder();
  const std::vector<int> seq{10, 10, 1, 2, 3, 4};
  const StateVector s = enc->infer(seq);
  AugmentationSpec spec;
  spec.kind = AugmentationKind::item_mask;
  spec.n = 2;
  Rng rng(7), replay(7);
  const auto views = make_views(seq, s, spec, *enc, rng);
  ASSERT_EQ(views.size(), 2u);
  for (const auto& v : views) {
    EXPECT_EQ(v.source, ViewSource::reencoded_masked_sequence);
    const auto masked = mask_one_item(seq, 4, 3, enc->catalog().mask_id(), replay);
    EXPECT_EQ(v.state, enc->infer(masked));
  }
  // Too short to mask: every view is the original state.
  const std::vector<int> short_seq{10, 10, 10, 1, 2, 3};
  for (const auto& v : make_views(short_seq, enc->infer(short_seq), spec, *enc, rng)) EXPECT_EQ(v.state, enc->infer(short_seq));
}

TEST(MakeViews, LocalityAndPurity) {
  auto enc = small_encoder();
  const std::vector<int> seq{1, 2, 3, 4, 5, 6};
  const StateVector s = enc->infer(seq);
  const StateVector original = s;
  Rng rng(9);
  AugmentationSpec spec;
  spec.n = 4;
  spec.kind = AugmentationKind::uniform;
  for (const auto& v : make_views(seq, s, spec, *enc, rng)) {
    EXPECT_EQ(v.source, ViewSource::direct_perturbation);
    EXPECT_LE((v.state - s).cwiseAbs().maxCoeff(), spec.beta + 1e-15);
  }
  spec.kind = AugmentationKind::dim_dropout;
  spec.drop_p = 0.5;
  for (const auto& v : make_views(seq, s, spec, *enc, rng))
    EXPECT_LE((v.state - s).cwiseAbs().maxCoeff(), s.cwiseAbs().maxCoeff());
  EXPECT_EQ(s, original);
}

TEST(MakeViews, Reproducible) {
  auto enc = small_encoder(EncoderKind::self_attention);
  const std::vector<int> seq{1, 2, 3, 4, 5, 6};
  const StateVector s = enc->infer(seq);
  for (auto kind : {AugmentationKind::gaussian, AugmentationKind::uniform, AugmentationKind::item_mask,
                    AugmentationKind::dim_dropout}) {
    AugmentationSpec spec;
    spec.kind = kind;
    Rng a(17), b(17);
    const auto va = make_views(seq, s, spec, *enc, a);
    const auto vb = make_views(seq, s, spec, *enc, b);
    ASSERT_EQ(va.size(), vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va[i].state, vb[i].state) << to_string(kind);
  }
}

TEST(BatchView, MatchesSingleStateDraws) {
  auto enc = small_encoder();
  const SequenceBatch seqs = SequenceBatch::from_rows({{10, 1, 2, 3, 4, 5}, {10, 10, 10, 1, 2, 3}, {1, 2, 3, 4, 5, 6}});
  const Matrix states = enc->infer(seqs);
  for (auto kind : {AugmentationKind::gaussian, AugmentationKind::uniform, AugmentationKind::item_mask,
                    AugmentationKind::dim_dropout}) {
    AugmentationSpec spec;
    spec.kind = kind;
    spec.drop_p = 0.3;
    Rng batch_rng(4), single_rng(4);
    const BatchView view = draw_batch_view(spec, seqs, 8, 10, 11, batch_rng);
    const Matrix applied = apply_view_values(spec, view, states, *enc);
    spec.n = 1;
    for (int r = 0; r < seqs.rows(); ++r) {
      const std::vector<int> seq(seqs.ids.begin() + r * 6, seqs.ids.begin() + (r + 1) * 6);
      const auto v = make_views(seq, states.row(r).transpose(), spec, *enc, single_rng);
      EXPECT_EQ(applied.row(r).transpose(), v[0].state) << to_string(kind) << " row " << r;
    }
  }
}

TEST(AugmentationSpec, ValidationAndNames) {
  AugmentationSpec spec;
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(spec.sigma, 0.003);
  EXPECT_EQ(spec.alpha, 0.001);
  EXPECT_EQ(spec.beta, 0.005);
  EXPECT_EQ(spec.min_len_T, 3);
  EXPECT_EQ(spec.drop_p, 0.1);
  for (auto kind : {AugmentationKind::gaussian, AugmentationKind::uniform, AugmentationKind::item_mask,
                    AugmentationKind::dim_dropout})
    EXPECT_EQ(augmentation_kind_from_string(to_string(kind)), kind);
  EXPECT_THROW(augmentation_kind_from_string("crop"), std::invalid_argument);
  spec.drop_p = 1.0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = {};
  spec.alpha = 0.01;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = {};
  spec.min_len_T = 0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}
