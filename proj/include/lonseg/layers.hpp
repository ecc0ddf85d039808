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

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lonseg/tensor.hpp"

namespace lonseg {

inline constexpr double kDefaultNegativeSlope = 0.01;
inline constexpr double kDefaultNormEps = 1e-5;

/// Conv3d(3x3x3) -> InstanceNorm(affine) -> LeakyReLU.
template <typename Scalar>
struct ConvBlock {
  Tensor<Scalar> weight;      // [Co, Ci, 3, 3, 3]
  Tensor<Scalar> bias;        // [Co]
  Tensor<Scalar> norm_scale;  // [Co]
  Tensor<Scalar> norm_shift;  // [Co]
  int stride = 1;
  Scalar negative_slope = Scalar(kDefaultNegativeSlope);
  Scalar norm_eps = Scalar(kDefaultNormEps);

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }
};

struct StageSpec {
  Index channels_in = 1;
  Index channels_out = 1;
  bool downsample = false;
  int conv_count = 2;
};

template <typename Scalar>
struct EncoderStage {
  StageSpec spec;
  std::vector<ConvBlock<Scalar>> blocks;
};

/// Transposed-conv upsampling from `channels_in` to `channels_out`, concat
/// with the skip (channels_out), then `conv_count` ConvBlocks.
template <typename Scalar>
struct DecoderStage {
  StageSpec spec;
  Tensor<Scalar> up_weight;  // [Ci, Co, 2, 2, 2]
  Tensor<Scalar> up_bias;    // [Co]
  std::vector<ConvBlock<Scalar>> blocks;
};

/// 1x1x1 projection to two logits (background, lesion).
template <typename Scalar>
struct SegHead {
  Tensor<Scalar> weight;  // [2, C]
  Tensor<Scalar> bias;    // [2]
};

template <typename Scalar>
using NamedTensor = std::pair<std::string, Tensor<Scalar>>;

/// Kaiming-normal conv weights (fan-in, LeakyReLU gain), zero bias, norm
/// scale 1 and shift 0.
template <typename Scalar>
ConvBlock<Scalar> make_conv_block(Index in_channels, Index out_channels, int stride, std::mt19937_64& rng,
                                  Scalar negative_slope = Scalar(kDefaultNegativeSlope),
                                  Scalar norm_eps = Scalar(kDefaultNormEps));

template <typename Scalar>
EncoderStage<Scalar> make_encoder_stage(const StageSpec& spec, std::mt19937_64& rng,
                                        Scalar negative_slope = Scalar(kDefaultNegativeSlope));

template <typename Scalar>
DecoderStage<Scalar> make_decoder_stage(const StageSpec& spec, std::mt19937_64& rng,
                                        Scalar negative_slope = Scalar(kDefaultNegativeSlope));

template <typename Scalar>
SegHead<Scalar> make_seg_head(Index in_channels, std::mt19937_64& rng);

template <typename Scalar>
Tensor<Scalar> conv_block_forward(const ConvBlock<Scalar>& block, const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> encoder_stage_forward(const Tensor<Scalar>& x, const EncoderStage<Scalar>& stage);

template <typename Scalar>
Tensor<Scalar> decoder_stage_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& skip,
                                     const DecoderStage<Scalar>& stage);

template <typename Scalar>
Tensor<Scalar> seg_head(const Tensor<Scalar>& x, const SegHead<Scalar>& head);

template <typename Scalar>
void append_parameters(const std::string& prefix, const ConvBlock<Scalar>& block,
                       std::vector<NamedTensor<Scalar>>& out);

}  // namespace lonseg
