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
#include "oracles.hpp"
#include "test_util.hpp"

namespace lonseg {
namespace {

using testing::from_vec;
using testing::random_tensor;
using testing::random_vec;
using testing::to_vec;

TEST(Tensor, SumGradientIsOnes) {
  auto x = TensorD::constant({2, 3, 4}, 0.5, true);
  sum(x).backward();
  for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], 1.0);
}

TEST(Tensor, HalfSquaredNormGradientIsInput) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({5, 2}, rng, true);
  mul(sum(square(x)), 0.5).backward();
  for (Index i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.value()[i]);
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls) {
  auto x = TensorD::constant({3}, 1.0, true);
  sum(x).backward();
  sum(mul(x, 2.0)).backward();
  EXPECT_EQ(x.grad()[0], 3.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SecondBackwardThrows) {
  auto x = TensorD::constant({3}, 1.0, true);
  auto loss = sum(square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), GraphError);
}

TEST(Tensor, NonScalarBackwardThrows) {
  auto x = TensorD::constant({3}, 1.0, true);
  EXPECT_THROW(square(x).backward(), GraphError);
}

TEST(Tensor, BroadcastMismatchThrows) {
  auto a = TensorD::zeros({2, 3});
  auto b = TensorD::zeros({3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, TensorD::zeros({2, 2})), ShapeError);
  EXPECT_NO_THROW(add(a, TensorD::zeros({2})));
  EXPECT_NO_THROW(add(a, TensorD::scalar(1.0)));
}

TEST(Tensor, FiniteChecksRejectNaN) {
  const bool before = finite_checks_enabled();
  set_finite_checks(true);
  auto x = TensorD::constant({2}, -1.0, true);
  EXPECT_THROW(sqrt(x), NonFiniteError);
  set_finite_checks(before);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  auto x = TensorD::constant({2}, 1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(square(x).requires_grad());
  }
  EXPECT_TRUE(square(x).requires_grad());
}

TEST(Tensor, DataOnNonLeafThrows) {
  auto x = TensorD::constant({2}, 1.0, true);
  auto y = square(x);
  EXPECT_ANY_THROW(y.data());
}

TEST(Ops, TanhOfOne) {
  EXPECT_NEAR(tanh(TensorD::scalar(1.0)).item(), 0.76159415595576489, 1e-15);
}

TEST(Ops, InstanceNormOfPlusMinusOne) {
  const double eps = 1e-5;
  auto x = from_vec({1, 1, 1, 2}, {-1.0, 1.0});
  auto y = instance_norm3d(x, eps);
  EXPECT_NEAR(y.value()[0], -1.0 / std::sqrt(1.0 + eps), 1e-15);
  EXPECT_NEAR(y.value()[1], 1.0 / std::sqrt(1.0 + eps), 1e-15);
}

TEST(Ops, InstanceNormZeroScaleGivesShift) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  auto y = instance_norm3d(x, 1e-5, from_vec({2}, {0.0, 0.0}), from_vec({2}, {0.25, -2.0}));
  for (Index i = 0; i < 18; ++i) EXPECT_EQ(y.value()[i], 0.25);
  for (Index i = 18; i < 36; ++i) EXPECT_EQ(y.value()[i], -2.0);
}

TEST(Ops, GlobalAvgPoolMatchesSummation) {
  std::mt19937_64 rng(5);
  const auto v = random_vec(3 * 2 * 3 * 4, rng);
  auto pooled = global_avg_pool(from_vec({3, 2, 3, 4}, v));
  ASSERT_EQ(pooled.shape(), (Shape{3}));
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (int i = 0; i < 24; ++i) s += v[c * 24 + i];
    EXPECT_NEAR(pooled.value()[c], s / 24, 1e-14);
  }
  EXPECT_EQ(global_avg_pool(TensorD::constant({1, 2, 2, 2}, 3.5)).item(), 3.5);
}

TEST(Ops, SoftmaxOfEqualLogitsIsHalf) {
  auto p = softmax(TensorD::constant({2, 1, 2, 2}, 0.7));
  for (Index i = 0; i < p.numel(); ++i) EXPECT_DOUBLE_EQ(p.value()[i], 0.5);
}

// Each primitive against the oracle differentiator on a scalar reduction.
TEST(Ops, PrimitiveGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Shape shape{2, 2, 2, 3};
  const auto base = random_vec(24, rng);
  const auto other = random_vec(24, rng);
  using Fn = std::function<TensorD(const TensorD&)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"tanh", [](const TensorD& x) { return tanh(x); }},
      {"sigmoid", [](const TensorD& x) { return sigmoid(x); }},
      {"leaky_relu", [](const TensorD& x) { return leaky_relu(x, 0.01); }},
      {"square", [](const TensorD& x) { return square(x); }},
      {"softmax", [](const TensorD& x) { return softmax(x); }},
      {"log_softmax", [](const TensorD& x) { return log_softmax(x); }},
      {"instance_norm", [](const TensorD& x) { return instance_norm3d(x, 1e-5); }},
      {"div", [&](const TensorD& x) { return div(x, add(square(from_vec(shape, other)), 1.0)); }},
      {"global_avg_pool", [](const TensorD& x) { return global_avg_pool(x); }},
  };
  for (const auto& [name, fn] : cases) {
    auto weights = from_vec(shape, other);
    auto objective = [&](const TensorD& x) {
      auto y = fn(x);
      return y.numel() == weights.numel() ? sum(mul(y, weights)) : sum(mul(y, y));
    };
    auto x = from_vec(shape, base, true);
    objective(x).backward();
    const auto numeric = oracle::finite_diff_grad(
        [&](const std::vector<double>& v) {
          NoGradGuard g;
          return objective(from_vec(shape, v)).item();
        },
        base);
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_NEAR(x.grad()[Index(i)], numeric[i], 1e-6 * std::max(1.0, std::abs(numeric[i]))) << name << " " << i;
    }
  }
}

TEST(Oracle, FiniteDifferenceBasics) {
  const std::vector<double> x{0.5, -2.0, 3.0};
  const auto ones = oracle::finite_diff_grad(
      [](const std::vector<double>& v) { return v[0] + v[1] + v[2]; }, x);
  for (double g : ones) EXPECT_NEAR(g, 1.0, 1e-9);
  const auto self = oracle::finite_diff_grad(
      [](const std::vector<double>& v) { return 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(self[i], x[i], 1e-9);
}

}  // namespace
}  // namespace lonseg
