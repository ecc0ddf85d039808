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
#include "lonseg/losses.hpp"

#include <cstdlib>

#include "lonseg/ops.hpp"

namespace lonseg {

namespace {

template <typename Scalar>
Tensor<Scalar> as_channel(const Tensor<Scalar>& logits, const Tensor<Scalar>& target) {
  if (logits.rank() != 4 || logits.dim(0) != 2) {
    throw ShapeError("segmentation logits must be 2 x D x H x W, got " + to_string(logits.shape()));
  }
  const Index voxels = logits.numel() / 2;
  if (target.numel() != voxels) {
    throw ShapeError("target " + to_string(target.shape()) + " does not match logits " + to_string(logits.shape()));
  }
  return reshape(target, {1, logits.dim(1), logits.dim(2), logits.dim(3)});
}

void check_birads(int score) {
  if (score < 0 || score > 6) throw std::invalid_argument("BI-RADS score " + std::to_string(score) + " outside [0, 6]");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, Scalar smooth) {
  const auto t = as_channel(logits, target);
  const auto p = slice(softmax(logits), 1, 1);
  const auto numerator = sum(p * t) * Scalar(2) + smooth;
  const auto denominator = sum(p) + sum(t) + smooth;
  return Scalar(1) - numerator / denominator;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target) {
  const auto t = as_channel(logits, target);
  const Index voxels = t.numel();
  Buffer<Scalar> onehot(2 * voxels);
  onehot.head(voxels) = Scalar(1) - t.value();
  onehot.tail(voxels) = t.value();
  const Tensor<Scalar> selector(logits.shape(), std::move(onehot));
  return -sum(log_softmax(logits) * selector) / Scalar(voxels);
}

std::vector<double> bcr_layer_schedule(int levels) {
  if (levels < 1) throw std::invalid_argument("BCR schedule needs at least one level");
  if (levels == 6) return {0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  if (levels == 1) return {1.0};
  std::vector<double> w(levels);
  for (int i = 0; i < levels; ++i) w[i] = 0.1 + 0.9 * double(i) / double(levels - 1);
  w.back() = 1.0;
  return w;
}

template <typename Scalar>
Tensor<Scalar> bcr_level_loss(const Tensor<Scalar>& k_t, const Tensor<Scalar>& k_prev, int birads_t,
                              int birads_prev, const BcrConfig& config) {
  check_birads(birads_t);
  check_birads(birads_prev);
  if (!(config.eps > 0)) throw std::invalid_argument("BCR eps must be positive");
  if (k_t.shape() != k_prev.shape()) {
    throw ShapeError("BCR: current " + to_string(k_t.shape()) + " vs prior " + to_string(k_prev.shape()));
  }
  const auto sq = square(k_t - k_prev);
  const auto distance = config.reduction == BcrReduction::sum_squared ? sum(sq) : mean(sq);
  const double delta = std::abs(birads_t - birads_prev);
  return tanh(distance) / Scalar(delta + config.eps);
}

template <typename Scalar>
Tensor<Scalar> bcr_total(const std::vector<FeaturePair<Scalar>>& features, int birads_t, int birads_prev,
                         const BcrConfig& config, std::vector<double>* per_level) {
  if (features.empty()) throw std::invalid_argument("BCR needs at least one feature level");
  const auto weights = config.layer_weights.empty() ? bcr_layer_schedule(int(features.size()))
                                                    : config.layer_weights;
  if (weights.size() != features.size()) {
    throw std::invalid_argument("BCR has " + std::to_string(weights.size()) + " layer weights for " +
                                std::to_string(features.size()) + " feature levels");
  }
  if (per_level) per_level->clear();
  Tensor<Scalar> total;
  for (std::size_t m = 0; m < features.size(); ++m) {
    auto level = bcr_level_loss(features[m].current, features[m].prior, birads_t, birads_prev, config);
    if (per_level) per_level->push_back(double(level.item()));
    auto term = level * Scalar(weights[m]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

void LossWeights::validate() const {
  if (dice < 0 || ce < 0 || bcr < 0) throw ConfigError("loss weights must be non-negative");
}

template <typename Scalar>
LossResult<Scalar> total_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                              const std::vector<FeaturePair<Scalar>>& features, int birads_t, int birads_prev,
                              const LossWeights& weights, const BcrConfig& config) {
  weights.validate();
  LossResult<Scalar> result;
  const auto dice = dice_loss(logits, target);
  const auto ce = cross_entropy_loss(logits, target);
  result.breakdown.dice = double(dice.item());
  result.breakdown.ce = double(ce.item());
  auto total = dice * Scalar(weights.dice) + ce * Scalar(weights.ce);

  const bool has_prior = !features.empty() && features.front().prior.defined();
  if (has_prior) {
    const auto bcr = bcr_total(features, birads_t, birads_prev, config, &result.breakdown.bcr_per_level);
    result.breakdown.bcr = double(bcr.item());
    total = total + bcr * Scalar(weights.bcr);
  }
  result.breakdown.total = double(total.item());
  result.total = total;
  return result;
}

#define LONSEG_INSTANTIATE_LOSSES(S)                                                                    \
  template Tensor<S> dice_loss(const Tensor<S>&, const Tensor<S>&, S);                                  \
  template Tensor<S> cross_entropy_loss(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> bcr_level_loss(const Tensor<S>&, const Tensor<S>&, int, int, const BcrConfig&);    \
  template Tensor<S> bcr_total(const std::vector<FeaturePair<S>>&, int, int, const BcrConfig&,          \
                               std::vector<double>*);                                                   \
  template LossResult<S> total_loss(const Tensor<S>&, const Tensor<S>&, const std::vector<FeaturePair<S>>&, \
                                    int, int, const LossWeights&, const BcrConfig&);

LONSEG_INSTANTIATE_LOSSES(float)
LONSEG_INSTANTIATE_LOSSES(double)

}  // namespace lonseg
