/*
 * Copyright 2026 The lonseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <cmath>

#include <gtest/gtest.h>

#include "lonseg/losses.hpp"
#include "lonseg/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace lonseg {
namespace {

using testing::from_vec;
using testing::random_vec;
using testing::to_vec;

TensorD logits_with_margin(double margin, Index voxels) {
  std::vector<double> v(2 * voxels, 0.0);
  for (Index i = 0; i < voxels; ++i) v[voxels + i] = margin;
  return from_vec({2, 1, 1, voxels}, v);
}

TEST(DiceLoss, CertainForegroundOnAllOnesIsZero) {
  const auto loss = dice_loss(logits_with_margin(60.0, 8), TensorD::constant({8}, 1.0)).item();
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(DiceLoss, CertainBackgroundOnAllOnesIsOne) {
  const auto loss = dice_loss(logits_with_margin(-60.0, 8), TensorD::constant({8}, 1.0)).item();
  EXPECT_NEAR(loss, 1.0, 2 * kDiceSmooth);
}

TEST(DiceLoss, MatchesScalarFormula) {
  std::mt19937_64 rng(31);
  const auto z = random_vec(2 * 27, rng);
  std::vector<double> t(27);
  for (int i = 0; i < 27; ++i) t[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
  double inter = 0, ps = 0, ts = 0;
  for (int i = 0; i < 27; ++i) {
    const double p = 1 / (1 + std::exp(z[i] - z[27 + i]));
    inter += p * t[i];
    ps += p;
    ts += t[i];
  }
  const double want = 1 - (2 * inter + kDiceSmooth) / (ps + ts + kDiceSmooth);
  EXPECT_NEAR(dice_loss(from_vec({2, 3, 3, 3}, z), from_vec({3, 3, 3}, t)).item(), want, 1e-14);
}

TEST(CrossEntropy, LargeCorrectMarginIsZero) {
  EXPECT_NEAR(cross_entropy_loss(logits_with_margin(50.0, 4), TensorD::constant({4}, 1.0)).item(), 0.0, 1e-15);
}

TEST(CrossEntropy, MatchesScalarFormula) {
  std::mt19937_64 rng(32);
  const auto z = random_vec(2 * 8, rng, 3.0);
  std::vector<double> t{1, 0, 0, 1, 1, 0, 1, 0};
  double want = 0;
  for (int i = 0; i < 8; ++i) {
    const double a = z[i], b = z[8 + i];
    const double lse = std::max(a, b) + std::log(std::exp(a - std::max(a, b)) + std::exp(b - std::max(a, b)));
    want -= (t[i] ? b : a) - lse;
  }
  EXPECT_NEAR(cross_entropy_loss(from_vec({2, 2, 2, 2}, z), from_vec({2, 2, 2}, t)).item(), want / 8, 1e-14);
}

TEST(Bcr, IdenticalFeaturesGiveExactZero) {
  std::mt19937_64 rng(33);
  auto k = from_vec({2, 2, 2, 2}, random_vec(16, rng));
  for (int delta : {0, 1, 3}) EXPECT_EQ(bcr_level_loss(k, k, 3 + delta, 3, BcrConfig{}).item(), 0.0);
}

TEST(Bcr, UnitSquaredDistanceAtZeroDelta) {
  auto a = from_vec({1, 1, 1, 2}, {0.25, 1.0});
  auto b = from_vec({1, 1, 1, 2}, {0.25, 0.0});
  const double loss = bcr_level_loss(a, b, 4, 4, BcrConfig{}).item();
  EXPECT_NEAR(loss, 7.6159415595576489, 1e-9);
}

TEST(Bcr, StrictlyDecreasingInDelta) {
  std::mt19937_64 rng(34);
  auto a = from_vec({1, 2, 2, 2}, random_vec(8, rng, 0.2));
  auto b = from_vec({1, 2, 2, 2}, random_vec(8, rng, 0.2));
  double previous = std::numeric_limits<double>::infinity();
  for (int delta = 0; delta <= 3; ++delta) {
    const double loss = bcr_level_loss(a, b, 2 + delta, 2, BcrConfig{}).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(Bcr, MatchesScalarReference) {
  std::mt19937_64 rng(35);
  for (int delta : {0, 1, 3}) {
    for (bool mean : {false, true}) {
      const auto a = random_vec(16, rng, 0.3), b = random_vec(16, rng, 0.3);
      BcrConfig config;
      config.reduction = mean ? BcrReduction::mean_squared : BcrReduction::sum_squared;
      const double got = bcr_level_loss(from_vec({2, 2, 2, 2}, a), from_vec({2, 2, 2, 2}, b), 2, 2 + delta, config).item();
      EXPECT_NEAR(got, oracle::bcr_level(a, b, 2, 2 + delta, 0.1, mean), 1e-12);
    }
  }
}

TEST(Bcr, SixLevelScheduleIsExact) {
  EXPECT_EQ(bcr_layer_schedule(6), (std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9, 1.0}));
  EXPECT_EQ(bcr_layer_schedule(1), (std::vector<double>{1.0}));
  const auto three = bcr_layer_schedule(3);
  EXPECT_NEAR(three[0], 0.1, 1e-15);
  EXPECT_NEAR(three[1], 0.55, 1e-15);
  EXPECT_EQ(three[2], 1.0);
}

TEST(Bcr, WeightedSumMatchesReference) {
  std::mt19937_64 rng(36);
  std::vector<FeaturePair<double>> features;
  std::vector<std::vector<double>> kt, kp;
  for (int m = 0; m < 6; ++m) {
    kt.push_back(random_vec(8, rng, 0.2));
    kp.push_back(random_vec(8, rng, 0.2));
    features.push_back({from_vec({1, 2, 2, 2}, kt.back()), from_vec({1, 2, 2, 2}, kp.back())});
  }
  std::vector<double> per_level;
  const double got = bcr_total(features, 4, 3, BcrConfig{}, &per_level).item();
  EXPECT_NEAR(got, oracle::bcr_total(kt, kp, bcr_layer_schedule(6), 4, 3, 0.1), 1e-12);
  ASSERT_EQ(per_level.size(), 6u);
  for (int m = 0; m < 6; ++m) EXPECT_NEAR(per_level[m], oracle::bcr_level(kt[m], kp[m], 4, 3, 0.1), 1e-12);
}

TEST(Bcr, SingleLevelUnitWeightEqualsLevelLoss) {
  std::mt19937_64 rng(37);
  auto a = from_vec({1, 2, 2, 2}, random_vec(8, rng)), b = from_vec({1, 2, 2, 2}, random_vec(8, rng));
  BcrConfig config;
  config.layer_weights = {1.0};
  EXPECT_EQ(bcr_total<double>({{a, b}}, 5, 3, config).item(), bcr_level_loss(a, b, 5, 3, config).item());
}

TEST(Bcr, RejectsBadInputs) {
  auto a = TensorD::zeros({1, 2, 2, 2});
  EXPECT_ANY_THROW(bcr_level_loss(a, a, 7, 3, BcrConfig{}));
  BcrConfig zero_eps;
  zero_eps.eps = 0;
  EXPECT_ANY_THROW(bcr_level_loss(a, a, 3, 3, zero_eps));
  BcrConfig wrong;
  wrong.layer_weights = {1.0, 1.0};
  EXPECT_ANY_THROW(bcr_total<double>({{a, a}}, 3, 3, wrong));
}

// Feature maps at network scale have squared distances far above 1, so the
// summed form sits on the flat part of tanh: the value pins to 1 / (delta + eps)
// and, in single precision, the gradient vanishes.
TEST(Bcr, SumReductionSaturatesOnLargeFeatures) {
  std::mt19937_64 rng(38);
  auto a = testing::random_tensor<float>({8, 4, 8, 8}, rng, true);
  auto b = testing::random_tensor<float>({8, 4, 8, 8}, rng);
  auto loss = bcr_level_loss(a, b, 4, 3, BcrConfig{});
  EXPECT_FLOAT_EQ(loss.item(), float(1 / 1.1));
  loss.backward();
  for (Index i = 0; i < a.numel(); ++i) EXPECT_EQ(a.grad()[i], 0.0f);

  BcrConfig mean;
  mean.reduction = BcrReduction::mean_squared;
  auto c = testing::random_tensor<float>({8, 4, 8, 8}, rng, true);
  auto averaged = bcr_level_loss(c, b, 4, 3, mean);
  EXPECT_LT(averaged.item(), 0.999f / 1.1f);
  averaged.backward();
  double norm = 0;
  for (Index i = 0; i < c.numel(); ++i) norm += std::abs(c.grad()[i]);
  EXPECT_GT(norm, 0.0);
}

TEST(TotalLoss, ZeroBcrWeightIsSegmentationLoss) {
  std::mt19937_64 rng(39);
  auto logits = from_vec({2, 2, 2, 2}, random_vec(16, rng));
  auto target = from_vec({2, 2, 2}, {1, 0, 0, 1, 0, 0, 0, 1});
  std::vector<FeaturePair<double>> f{{from_vec({1, 2, 2, 2}, random_vec(8, rng)), from_vec({1, 2, 2, 2}, random_vec(8, rng))}};
  const auto result = total_loss(logits, target, f, 4, 2, LossWeights{1.0, 1.0, 0.0}, BcrConfig{});
  EXPECT_EQ(result.total.item(), dice_loss(logits, target).item() + cross_entropy_loss(logits, target).item());
  EXPECT_GT(result.breakdown.bcr, 0.0);
  const auto weighted = total_loss(logits, target, f, 4, 2, LossWeights{0.5, 2.0, 0.1}, BcrConfig{});
  EXPECT_NEAR(weighted.breakdown.total,
              0.5 * weighted.breakdown.dice + 2.0 * weighted.breakdown.ce + 0.1 * weighted.breakdown.bcr, 1e-14);
}

TEST(TotalLoss, NegativeWeightRejected) {
  EXPECT_THROW((LossWeights{1.0, -1.0, 0.1}.validate()), ConfigError);
}

TEST(Oracle, BcrOfIdenticalFeaturesIsZero) {
  const std::vector<double> a{0.5, -1.0, 2.0};
  EXPECT_EQ(oracle::bcr_level(a, a, 4, 3, 0.1), 0.0);
}

}  // namespace
}  // namespace lonseg
