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
#include "lonseg/tpa.hpp"

#include <cmath>

#include "lonseg/ops.hpp"

namespace lonseg {

namespace {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev, const char* where) {
  if (k_t.shape() != k_prev.shape()) {
    throw ShapeError(std::string(where) + ": current " + to_string(k_t.shape()) + " vs prior " +
                     to_string(k_prev.shape()));
  }
  if (k_t.rank() != 4) throw ShapeError(std::string(where) + ": expected C x D x H x W features");
}

}  // namespace

template <typename Scalar>
TpaParams<Scalar> make_tpa_params(Index channels, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / double(channels)));
  Buffer<Scalar> w(channels);
  for (Index i = 0; i < channels; ++i) w[i] = Scalar(dist(rng));
  TpaParams<Scalar> params;
  params.proj_weight = Tensor<Scalar>({1, channels}, std::move(w), true);
  params.proj_bias = Tensor<Scalar>::zeros({1}, true);
  return params;
}

template <typename Scalar>
Tensor<Scalar> awg_descriptor(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev) {
  require_same_shape(k_t, k_prev, "awg");
  return global_avg_pool(stack<Scalar>({k_t, k_prev}));
}

template <typename Scalar>
AttentionWeights<Scalar> awg_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                                     const TpaParams<Scalar>& params) {
  if (params.channels() != k_t.dim(0)) {
    throw ShapeError("awg: projection spans " + std::to_string(params.channels()) + " channels, features have " +
                     std::to_string(k_t.dim(0)));
  }
  auto descriptor = awg_descriptor(k_t, k_prev);                                 // [2, C]
  auto w = sigmoid(linear(descriptor, params.proj_weight, params.proj_bias));  // [2, 1]
  return {reshape(slice(w, 0, 1), {1}), reshape(slice(w, 1, 1), {1})};
}

template <typename Scalar>
Tensor<Scalar> fm_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                          const AttentionWeights<Scalar>& weights, Scalar eps) {
  require_same_shape(k_t, k_prev, "fm");
  auto residual = mul(k_t, weights.current) - mul(k_prev, weights.prior);
  return k_t * instance_norm3d(residual, eps) + k_t;
}

template <typename Scalar>
TpaOutput<Scalar> tpa_forward(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev,
                              const TpaParams<Scalar>& params) {
  auto weights = awg_forward(k_t, k_prev, params);
  auto features = fm_forward(k_t, k_prev, weights, params.eps);
  return {std::move(features), std::move(weights)};
}

template <typename Scalar>
Tensor<Scalar> fixed_difference_modulation(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev, Scalar eps) {
  require_same_shape(k_t, k_prev, "fixed modulation");
  return k_t + instance_norm3d(k_t - k_prev, eps) * k_t;
}

#define LONSEG_INSTANTIATE_TPA(S)                                                                    \
  template TpaParams<S> make_tpa_params(Index, std::mt19937_64&);                                    \
  template Tensor<S> awg_descriptor(const Tensor<S>&, const Tensor<S>&);                             \
  template AttentionWeights<S> awg_forward(const Tensor<S>&, const Tensor<S>&, const TpaParams<S>&); \
  template Tensor<S> fm_forward(const Tensor<S>&, const Tensor<S>&, const AttentionWeights<S>&, S);  \
  template TpaOutput<S> tpa_forward(const Tensor<S>&, const Tensor<S>&, const TpaParams<S>&);        \
  template Tensor<S> fixed_difference_modulation(const Tensor<S>&, const Tensor<S>&, S);

LONSEG_INSTANTIATE_TPA(float)
LONSEG_INSTANTIATE_TPA(double)

}  // namespace lonseg
