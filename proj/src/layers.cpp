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
#include "lonseg/layers.hpp"

#include <cmath>

#include "lonseg/conv.hpp"
#include "lonseg/ops.hpp"

namespace lonseg {

namespace {

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Buffer<Scalar> values(numel(shape));
  for (Index i = 0; i < values.size(); ++i) values[i] = Scalar(dist(rng));
  return Tensor<Scalar>(std::move(shape), std::move(values), true);
}

}  // namespace

template <typename Scalar>
ConvBlock<Scalar> make_conv_block(Index in_channels, Index out_channels, int stride, std::mt19937_64& rng,
                                  Scalar negative_slope, Scalar norm_eps) {
  const double fan_in = double(in_channels) * 27.0;
  const double slope = double(negative_slope);
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  ConvBlock<Scalar> block;
  block.weight = normal_tensor<Scalar>({out_channels, in_channels, 3, 3, 3}, stddev, rng);
  block.bias = Tensor<Scalar>::zeros({out_channels}, true);
  block.norm_scale = Tensor<Scalar>::constant({out_channels}, Scalar(1), true);
  block.norm_shift = Tensor<Scalar>::zeros({out_channels}, true);
  block.stride = stride;
  block.negative_slope = negative_slope;
  block.norm_eps = norm_eps;
  return block;
}

template <typename Scalar>
EncoderStage<Scalar> make_encoder_stage(const StageSpec& spec, std::mt19937_64& rng, Scalar negative_slope) {
  if (spec.conv_count < 1) throw std::invalid_argument("encoder stage needs at least one conv");
  EncoderStage<Scalar> stage{spec, {}};
  for (int i = 0; i < spec.conv_count; ++i) {
    const Index cin = i == 0 ? spec.channels_in : spec.channels_out;
    const int stride = (i == 0 && spec.downsample) ? 2 : 1;
    stage.blocks.push_back(make_conv_block<Scalar>(cin, spec.channels_out, stride, rng, negative_slope));
  }
  return stage;
}

template <typename Scalar>
DecoderStage<Scalar> make_decoder_stage(const StageSpec& spec, std::mt19937_64& rng, Scalar negative_slope) {
  if (spec.conv_count != 2) throw std::invalid_argument("decoder stages have exactly 2 convolutions");
  DecoderStage<Scalar> stage;
  stage.spec = spec;
  const double stddev = std::sqrt(2.0 / (double(spec.channels_in) * 8.0));
  stage.up_weight = normal_tensor<Scalar>({spec.channels_in, spec.channels_out, 2, 2, 2}, stddev, rng);
  stage.up_bias = Tensor<Scalar>::zeros({spec.channels_out}, true);
  stage.blocks.push_back(make_conv_block<Scalar>(2 * spec.channels_out, spec.channels_out, 1, rng, negative_slope));
  stage.blocks.push_back(make_conv_block<Scalar>(spec.channels_out, spec.channels_out, 1, rng, negative_slope));
  return stage;
}

template <typename Scalar>
SegHead<Scalar> make_seg_head(Index in_channels, std::mt19937_64& rng) {
  SegHead<Scalar> head;
  head.weight = normal_tensor<Scalar>({2, in_channels}, std::sqrt(1.0 / double(in_channels)), rng);
  head.bias = Tensor<Scalar>::zeros({2}, true);
  return head;
}

template <typename Scalar>
Tensor<Scalar> conv_block_forward(const ConvBlock<Scalar>& block, const Tensor<Scalar>& x) {
  auto y = conv3d(x, block.weight, block.bias, block.stride);
  y = instance_norm3d(y, block.norm_eps, block.norm_scale, block.norm_shift);
  return leaky_relu(y, block.negative_slope);
}

template <typename Scalar>
Tensor<Scalar> encoder_stage_forward(const Tensor<Scalar>& x, const EncoderStage<Scalar>& stage) {
  if (x.rank() != 4 || x.dim(0) != stage.spec.channels_in) {
    throw ShapeError("encoder stage expects " + std::to_string(stage.spec.channels_in) +
                     " input channels, got " + to_string(x.shape()));
  }
  if (stage.spec.downsample) {
    for (std::size_t axis = 1; axis < 4; ++axis) {
      if (x.dim(axis) < 2) {
        throw ShapeError("input " + to_string(x.shape()) + " too small to downsample; reduce the stage count");
      }
    }
  }
  Tensor<Scalar> y = x;
  for (const auto& block : stage.blocks) y = conv_block_forward(block, y);
  return y;
}

template <typename Scalar>
Tensor<Scalar> decoder_stage_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& skip,
                                     const DecoderStage<Scalar>& stage) {
  auto up = conv_transpose3d(x, stage.up_weight, stage.up_bias);
  if (skip.rank() != 4 || up.dim(1) != skip.dim(1) || up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3)) {
    throw ShapeError("decoder: upsampled " + to_string(up.shape()) + " does not match skip " +
                     to_string(skip.shape()) + "; inconsistent architecture configuration");
  }
  auto y = concat<Scalar>({up, skip});
  for (const auto& block : stage.blocks) y = conv_block_forward(block, y);
  return y;
}

template <typename Scalar>
Tensor<Scalar> seg_head(const Tensor<Scalar>& x, const SegHead<Scalar>& head) {
  return pointwise_conv3d(x, head.weight, head.bias);
}

template <typename Scalar>
void append_parameters(const std::string& prefix, const ConvBlock<Scalar>& block,
                       std::vector<NamedTensor<Scalar>>& out) {
  out.emplace_back(prefix + ".weight", block.weight);
  out.emplace_back(prefix + ".bias", block.bias);
  out.emplace_back(prefix + ".norm_scale", block.norm_scale);
  out.emplace_back(prefix + ".norm_shift", block.norm_shift);
}

#define LONSEG_INSTANTIATE_LAYERS(S)                                                                   \
  template ConvBlock<S> make_conv_block(Index, Index, int, std::mt19937_64&, S, S);                    \
  template EncoderStage<S> make_encoder_stage(const StageSpec&, std::mt19937_64&, S);                  \
  template DecoderStage<S> make_decoder_stage(const StageSpec&, std::mt19937_64&, S);                  \
  template SegHead<S> make_seg_head(Index, std::mt19937_64&);                                          \
  template Tensor<S> conv_block_forward(const ConvBlock<S>&, const Tensor<S>&);                        \
  template Tensor<S> encoder_stage_forward(const Tensor<S>&, const EncoderStage<S>&);                  \
  template Tensor<S> decoder_stage_forward(const Tensor<S>&, const Tensor<S>&, const DecoderStage<S>&); \
  template Tensor<S> seg_head(const Tensor<S>&, const SegHead<S>&);                                    \
  template void append_parameters(const std::string&, const ConvBlock<S>&, std::vector<NamedTensor<S>>&);

LONSEG_INSTANTIATE_LAYERS(float)
LONSEG_INSTANTIATE_LAYERS(double)

}  // namespace lonseg
