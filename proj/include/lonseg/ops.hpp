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

#include <type_traits>
#include <vector>

#include "lonseg/tensor.hpp"

namespace lonseg {

// Binary operations accept a right-hand side of the same shape, a single
// element (scalar broadcast), or a rank-1 tensor of length shape[0] against a
// rank >= 2 left-hand side (per-channel broadcast).

template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar b);
template <typename Scalar> Tensor<Scalar> div(const Tensor<Scalar>& a, Scalar b);
template <typename Scalar> Tensor<Scalar> neg(const Tensor<Scalar>& a);

template <typename Scalar> Tensor<Scalar> tanh(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar negative_slope);
template <typename Scalar> Tensor<Scalar> square(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sqrt(const Tensor<Scalar>& a);

/// Sum of all elements, shape [1].
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a);
/// Mean of all elements, shape [1].
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a);

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

/// Rows [begin, begin + count) along axis 0.
template <typename Scalar> Tensor<Scalar> slice(const Tensor<Scalar>& a, Index begin, Index count);
/// Concatenation along axis 0; trailing extents must agree.
template <typename Scalar> Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts);
/// Stacks same-shape tensors along a new leading axis.
template <typename Scalar> Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& parts);

/// Softmax and log-softmax over axis 0 (the class/channel axis).
template <typename Scalar> Tensor<Scalar> softmax(const Tensor<Scalar>& logits);
template <typename Scalar> Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits);

/// Mean over the last three (spatial) axes: [..., D, H, W] -> [...].
template <typename Scalar> Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);

/// Per-channel normalization of a C x D x H x W tensor over its spatial axes
/// with biased variance. `scale` and `shift` are optional length-C tensors.
template <typename Scalar>
Tensor<Scalar> instance_norm3d(const Tensor<Scalar>& x, Scalar eps,
                               const Tensor<Scalar>& scale = {}, const Tensor<Scalar>& shift = {});

/// x [N x K], weight [M x K], bias [M] -> [N x M].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return neg(a); }

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, std::type_identity_t<Scalar> b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator+(std::type_identity_t<Scalar> a, const Tensor<Scalar>& b) { return add(b, a); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, std::type_identity_t<Scalar> b) { return add(a, -b); }
template <typename Scalar>
Tensor<Scalar> operator-(std::type_identity_t<Scalar> a, const Tensor<Scalar>& b) { return add(neg(b), a); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, std::type_identity_t<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(std::type_identity_t<Scalar> a, const Tensor<Scalar>& b) { return mul(b, a); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, std::type_identity_t<Scalar> b) { return div(a, b); }

}  // namespace lonseg
