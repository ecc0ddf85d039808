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
#pragma once

#include <vector>

#include "lonseg/network.hpp"

namespace lonseg {

inline constexpr double kDiceSmooth = 1e-5;

/// Soft Dice loss on the foreground softmax channel of [2, D, H, W] logits.
/// `target` holds {0, 1} with D*H*W elements (any shape).
template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                         Scalar smooth = Scalar(kDiceSmooth));

/// Mean voxelwise cross-entropy of [2, D, H, W] logits against a {0, 1} target.
template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target);

enum class BcrReduction {
  sum_squared,   // squared Euclidean distance of the full feature maps
  mean_squared,  // same, divided by the element count
};

struct BcrConfig {
  double eps = 0.1;
  std::vector<double> layer_weights;  // empty: default schedule for the level count
  BcrReduction reduction = BcrReduction::sum_squared;
};

/// Layer weights rising from 0.1 to 1.0 over `levels`. Six levels give the
/// reference schedule {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}; other counts are linear.
std::vector<double> bcr_layer_schedule(int levels);

/// tanh(d(k_t, k_prev)) / (|birads_t - birads_prev| + eps).
template <typename Scalar>
Tensor<Scalar> bcr_level_loss(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev, int birads_t,
                              int birads_prev, const BcrConfig& config);

/// Layer-weighted sum of bcr_level_loss. `per_level`, when given, receives
/// each unweighted level term.
template <typename Scalar>
Tensor<Scalar> bcr_total(const std::vector<FeaturePair<Scalar>>& features, int birads_t, int birads_prev,
                         const BcrConfig& config, std::vector<double>* per_level = nullptr);

struct LossWeights {
  double dice = 1.0;
  double ce = 1.0;
  double bcr = 0.1;

  void validate() const;
};

struct LossBreakdown {
  double dice = 0;
  double ce = 0;
  std::vector<double> bcr_per_level;
  double bcr = 0;
  double total = 0;
};

template <typename Scalar>
struct LossResult {
  Tensor<Scalar> total;
  LossBreakdown breakdown;
};

/// lambda_dice * Dice + lambda_ce * CE + lambda_bcr * BCR. The BCR term is
/// skipped (reported as 0) when the prior features are absent.
template <typename Scalar>
LossResult<Scalar> total_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                              const std::vector<FeaturePair<Scalar>>& features, int birads_t, int birads_prev,
                              const LossWeights& weights, const BcrConfig& config);

}  // namespace lonseg
