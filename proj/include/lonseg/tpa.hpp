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

// Temporal prior attention.
//
// Given encoder features of the current (k_t) and prior (k_prev) scan at one
// pyramid level, the attention weight generator pools both to per-channel
// descriptors, projects each descriptor to one logit with a shared
// full-width 1D convolution and applies a sigmoid, giving (w1, w2). The feature
// modulator then computes
//
//     k_t * InstNorm(w1 * k_t - w2 * k_prev) + k_t
//
// with an affine-free instance normalization.

#include <random>

#include "lonseg/tensor.hpp"

namespace lonseg {

inline constexpr double kTpaNormEps = 1e-5;

template <typename Scalar>
struct TpaParams {
  Tensor<Scalar> proj_weight;  // [1, C], shared by both timepoint slots
  Tensor<Scalar> proj_bias;    // [1]
  Scalar eps = Scalar(kTpaNormEps);

  Index channels() const { return proj_weight.dim(1); }
};

/// Two soft weights, each a [1] tensor in (0, 1).
template <typename Scalar>
struct AttentionWeights {
  Tensor<Scalar> current;  // w1, timepoint t
  Tensor<Scalar> prior;    // w2, timepoint t-1

  double w1() const { return double(current.item()); }
  double w2() const { return double(prior.item()); }
};

template <typename Scalar>
struct TpaOutput {
  Tensor<Scalar> features;
  AttentionWeights<Scalar> weights;
};

template <typename Scalar>
TpaParams<Scalar> make_tpa_params(Index channels, std::mt19937_64& rng);

/// Pooled [2, C] descriptor of the stacked (current, prior) pair.
template <typename Scalar>
Tensor<Scalar> awg_descriptor(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev);

template <typename Scalar>
AttentionWeights<Scalar> awg_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                                     const TpaParams<Scalar>& params);

template <typename Scalar>
Tensor<Scalar> fm_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                          const AttentionWeights<Scalar>& weights, Scalar eps = Scalar(kTpaNormEps));

template <typename Scalar>
TpaOutput<Scalar> tpa_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                              const TpaParams<Scalar>& params);

/// Modulation with both weights fixed to 1 and no generator; the no-TPA
/// ablation's difference weighting.
template <typename Scalar>
Tensor<Scalar> fixed_difference_modulation(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                                           Scalar eps = Scalar(kTpaNormEps));

}  // namespace lonseg
