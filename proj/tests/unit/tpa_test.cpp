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

#include "lonseg/ops.hpp"
#include "lonseg/tpa.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace lonseg {
namespace {

using testing::from_vec;
using testing::random_tensor;
using testing::random_vec;
using testing::to_vec;

AttentionWeights<double> fixed(double w1, double w2) { return {TensorD::scalar(w1), TensorD::scalar(w2)}; }

double max_rel(const std::vector<double>& got, const std::vector<double>& want) {
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(std::abs(want[i]), 1e-12));
  }
  return worst;
}

TEST(Tpa, EqualFeaturesEqualWeightsReturnCurrent) {
  std::mt19937_64 rng(21);
  for (double w : {0.1, 0.5, 0.93}) {
    auto k = random_tensor({3, 2, 4, 4}, rng);
    const auto out = fm_forward(k, k, fixed(w, w));
    EXPECT_LT(max_rel(to_vec(out), to_vec(k)), 1e-6);
  }
}

TEST(Tpa, ZeroWeightsReturnCurrent) {
  std::mt19937_64 rng(22);
  auto k_t = random_tensor({3, 2, 4, 4}, rng);
  auto k_prev = random_tensor({3, 2, 4, 4}, rng);
  EXPECT_LT(max_rel(to_vec(fm_forward(k_t, k_prev, fixed(0.0, 0.0))), to_vec(k_t)), 1e-6);
}

TEST(Tpa, ZeroGeneratorOnIdenticalInputsReturnsCurrent) {
  std::mt19937_64 rng(23);
  auto params = make_tpa_params<double>(4, rng);
  params.proj_weight = TensorD::zeros({1, 4});
  params.proj_bias = TensorD::zeros({1});
  auto k = random_tensor({4, 2, 2, 2}, rng);
  const auto out = tpa_forward(k, k, params);
  EXPECT_EQ(out.weights.w1(), 0.5);
  EXPECT_EQ(out.weights.w2(), 0.5);
  EXPECT_EQ(to_vec(out.features), to_vec(k));
}

TEST(Tpa, ModulationMatchesScalarReference) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    const int c = 1 + trial % 4;
    const auto a = random_vec(std::size_t(c) * 2 * 3 * 4, rng);
    const auto b = random_vec(a.size(), rng);
    std::uniform_real_distribution<double> u(0, 1);
    const double w1 = u(rng), w2 = u(rng);
    const auto got = fm_forward(from_vec({c, 2, 3, 4}, a), from_vec({c, 2, 3, 4}, b), fixed(w1, w2));
    const auto want = oracle::modulation(a, b, c, w1, w2, kTpaNormEps);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(to_vec(got)[i], want[i], 1e-12);
  }
}

TEST(Tpa, GeneratorSharesProjectionAcrossTimepoints) {
  std::mt19937_64 rng(25);
  const int c = 5;
  auto params = make_tpa_params<double>(c, rng);
  params.proj_weight = random_tensor({1, c}, rng);
  params.proj_bias = random_tensor({1}, rng);
  const auto a = random_vec(c * 8, rng), b = random_vec(c * 8, rng);
  const auto weights = awg_forward(from_vec({c, 2, 2, 2}, a), from_vec({c, 2, 2, 2}, b), params);
  auto expected = [&](const std::vector<double>& v) {
    double z = params.proj_bias.value()[0];
    for (int ch = 0; ch < c; ++ch) {
      double m = 0;
      for (int i = 0; i < 8; ++i) m += v[ch * 8 + i];
      z += params.proj_weight.value()[ch] * m / 8;
    }
    return 1 / (1 + std::exp(-z));
  };
  EXPECT_NEAR(weights.w1(), expected(a), 1e-14);
  EXPECT_NEAR(weights.w2(), expected(b), 1e-14);
  // Swapping the timepoints swaps the weights.
  const auto swapped = awg_forward(from_vec({c, 2, 2, 2}, b), from_vec({c, 2, 2, 2}, a), params);
  EXPECT_EQ(swapped.w1(), weights.w2());
  EXPECT_EQ(swapped.w2(), weights.w1());
}

TEST(Tpa, DescriptorIsChannelMeans) {
  std::mt19937_64 rng(26);
  const auto a = random_vec(3 * 12, rng), b = random_vec(3 * 12, rng);
  const auto d = awg_descriptor(from_vec({3, 2, 2, 3}, a), from_vec({3, 2, 2, 3}, b));
  ASSERT_EQ(d.shape(), (Shape{2, 3}));
  for (int ch = 0; ch < 3; ++ch) {
    double sa = 0, sb = 0;
    for (int i = 0; i < 12; ++i) {
      sa += a[ch * 12 + i];
      sb += b[ch * 12 + i];
    }
    EXPECT_NEAR(d.value()[ch], sa / 12, 1e-14);
    EXPECT_NEAR(d.value()[3 + ch], sb / 12, 1e-14);
  }
}

TEST(Tpa, FullBlockMatchesReferenceWithGeneratedWeights) {
  std::mt19937_64 rng(27);
  auto params = make_tpa_params<double>(3, rng);
  const auto a = random_vec(3 * 27, rng), b = random_vec(3 * 27, rng);
  const auto out = tpa_forward(from_vec({3, 3, 3, 3}, a), from_vec({3, 3, 3, 3}, b), params);
  const auto want = oracle::modulation(a, b, 3, out.weights.w1(), out.weights.w2(), kTpaNormEps);
  const auto got = to_vec(out.features);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Tpa, FixedDifferenceUsesUnitWeights) {
  std::mt19937_64 rng(28);
  const auto a = random_vec(2 * 8, rng), b = random_vec(2 * 8, rng);
  const auto got = to_vec(fixed_difference_modulation(from_vec({2, 2, 2, 2}, a), from_vec({2, 2, 2, 2}, b)));
  const auto want = oracle::modulation(a, b, 2, 1.0, 1.0, kTpaNormEps);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Tpa, RejectsMismatchedPair) {
  std::mt19937_64 rng(29);
  auto params = make_tpa_params<double>(2, rng);
  EXPECT_ANY_THROW(tpa_forward(TensorD::zeros({2, 2, 2, 2}), TensorD::zeros({2, 2, 2, 4}), params));
  EXPECT_ANY_THROW(tpa_forward(TensorD::zeros({3, 2, 2, 2}), TensorD::zeros({3, 2, 2, 2}), params));
}

TEST(Oracle, ModulationWithZeroWeightsIsIdentity) {
  std::mt19937_64 rng(30);
  const auto a = random_vec(16, rng), b = random_vec(16, rng);
  EXPECT_EQ(oracle::modulation(a, b, 2, 0, 0, 1e-5), a);
}

}  // namespace
}  // namespace lonseg
