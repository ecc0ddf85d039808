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

#include "lonseg/tensor.hpp"

namespace lonseg {

/// Kernel used by conv3d.
///
/// `direct` accumulates every output voxel as bias + sum over (c_in, kd, kh, kw)
/// in that order, which makes it bit-reproducible against a nested-loop
/// definition. `gemm` lowers to im2col and an Eigen matrix product; it is much
/// faster but reorders the sums. `automatic` picks direct for double and gemm
/// for float.
enum class ConvAlgorithm { automatic, direct, gemm };

void set_conv_algorithm(ConvAlgorithm algorithm);
ConvAlgorithm conv_algorithm();

/// RAII override of the convolution kernel for the current thread.
class ScopedConvAlgorithm {
 public:
  explicit ScopedConvAlgorithm(ConvAlgorithm algorithm) : previous_(conv_algorithm()) {
    set_conv_algorithm(algorithm);
  }
  ~ScopedConvAlgorithm() { set_conv_algorithm(previous_); }
  ScopedConvAlgorithm(const ScopedConvAlgorithm&) = delete;
  ScopedConvAlgorithm& operator=(const ScopedConvAlgorithm&) = delete;

 private:
  ConvAlgorithm previous_;
};

/// 3x3x3 convolution with padding 1.
///
/// input [Ci, D, H, W], weight [Co, Ci, 3, 3, 3], bias [Co], stride 1 or 2.
/// Output extents are floor((n + 2 - 3) / stride) + 1 per spatial axis.
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride = 1);

/// 2x2x2 stride-2 transposed convolution.
/// input [Ci, D, H, W], weight [Ci, Co, 2, 2, 2], bias [Co] -> [Co, 2D, 2H, 2W].
template <typename Scalar>
Tensor<Scalar> conv_transpose3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias);

/// 1x1x1 convolution: input [Ci, D, H, W], weight [Co, Ci], bias [Co].
template <typename Scalar>
Tensor<Scalar> pointwise_conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias);

}  // namespace lonseg
