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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lonseg/layers.hpp"
#include "lonseg/tpa.hpp"

namespace lonseg {

/// Model variants. `no_bcr` shares the full architecture and differs only in
/// training (BCR weight forced to zero).
enum class Variant { full, no_tpa, no_bcr, single };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);

/// Whether the variant carries learned attention weight generators.
bool uses_attention(Variant variant);

struct NetworkConfig {
  std::vector<Index> channels{8, 16, 32};
  Index input_channels = 1;
  std::array<Index, 3> extents{16, 32, 32};  // D, H, W
  Variant variant = Variant::full;
  int conv_per_stage = 2;
  double negative_slope = kDefaultNegativeSlope;

  int stages() const { return int(channels.size()); }

  /// Throws ConfigError for an empty channel list, non-positive sizes, or
  /// extents not divisible by 2^(stages-1).
  void validate() const;

  /// 3-stage [8, 16, 32] network on 16 x 32 x 32 inputs.
  static NetworkConfig toy();
  /// 6-stage [32, 64, 128, 256, 320, 320] plain conv U-Net.
  static NetworkConfig full_scale();
};

template <typename Scalar>
struct NetworkParams {
  std::vector<EncoderStage<Scalar>> encoder;
  std::vector<TpaParams<Scalar>> tpa;         // one per level; empty without attention
  std::vector<DecoderStage<Scalar>> decoder;  // decoder[s] outputs level s, s < stages - 1
  SegHead<Scalar> head;

  std::vector<NamedTensor<Scalar>> named_parameters() const;
  Index parameter_count() const;
  void zero_grad() const;
};

template <typename Scalar>
NetworkParams<Scalar> init_network(const NetworkConfig& config, std::uint64_t seed);

template <typename Scalar>
struct FeaturePair {
  Tensor<Scalar> current;
  Tensor<Scalar> prior;
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;                           // [2, D, H, W]
  std::vector<FeaturePair<Scalar>> features;       // encoder output per level, before modulation
  std::vector<AttentionWeights<Scalar>> weights;   // per level; empty unless attention is used
};

/// Dispatches on config.variant.
template <typename Scalar>
ForwardResult<Scalar> forward(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                              const NetworkParams<Scalar>& params, const NetworkConfig& config);

/// Attention-modulated skips at every level, bottleneck included.
template <typename Scalar>
ForwardResult<Scalar> forward_tpa(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                                  const NetworkParams<Scalar>& params, const NetworkConfig& config);

/// Skips computed as k_t + InstNorm(k_t - k_prev) * k_t.
template <typename Scalar>
ForwardResult<Scalar> forward_no_tpa(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                                     const NetworkParams<Scalar>& params, const NetworkConfig& config);

/// Current scan only; `features[m].prior` is left undefined.
template <typename Scalar>
ForwardResult<Scalar> forward_single(const Tensor<Scalar>& x_t, const NetworkParams<Scalar>& params,
                                     const NetworkConfig& config);

/// Encoder pyramid of one scan.
template <typename Scalar>
std::vector<Tensor<Scalar>> encode(const Tensor<Scalar>& x, const NetworkParams<Scalar>& params);

/// Closed-form learnable parameter count.
Index parameter_count(const NetworkConfig& config);

/// Expected C x D x H x W encoder feature shape per level.
std::vector<Shape> encoder_feature_shapes(const NetworkConfig& config);

}  // namespace lonseg
