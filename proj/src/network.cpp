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
#include "lonseg/network.hpp"

#include "lonseg/ops.hpp"

namespace lonseg {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::full: return "full";
    case Variant::no_tpa: return "no-tpa";
    case Variant::no_bcr: return "no-bcr";
    case Variant::single: return "single";
  }
  return "full";
}

Variant parse_variant(const std::string& text) {
  if (text == "full") return Variant::full;
  if (text == "no-tpa") return Variant::no_tpa;
  if (text == "no-bcr") return Variant::no_bcr;
  if (text == "single" || text == "single-timepoint") return Variant::single;
  throw ConfigError("unknown variant '" + text + "' (expected full, no-tpa, no-bcr or single)");
}

bool uses_attention(Variant variant) { return variant == Variant::full || variant == Variant::no_bcr; }

void NetworkConfig::validate() const {
  if (channels.empty()) throw ConfigError("network needs at least one stage");
  for (Index c : channels) {
    if (c < 1) throw ConfigError("channel counts must be positive");
  }
  if (input_channels < 1) throw ConfigError("input_channels must be positive");
  if (conv_per_stage < 1) throw ConfigError("conv_per_stage must be positive");
  const Index factor = Index(1) << (stages() - 1);
  for (Index e : extents) {
    if (e < 1 || e % factor != 0) {
      throw ConfigError("input extents " + to_string(Shape(extents.begin(), extents.end())) +
                        " must be divisible by " + std::to_string(factor) + " for " +
                        std::to_string(stages()) + " stages");
    }
  }
}

NetworkConfig NetworkConfig::toy() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::full_scale() {
  NetworkConfig config;
  config.channels = {32, 64, 128, 256, 320, 320};
  config.extents = {32, 128, 128};
  return config;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> NetworkParams<Scalar>::named_parameters() const {
  std::vector<NamedTensor<Scalar>> out;
  for (std::size_t s = 0; s < encoder.size(); ++s) {
    for (std::size_t b = 0; b < encoder[s].blocks.size(); ++b) {
      append_parameters("encoder." + std::to_string(s) + ".conv" + std::to_string(b), encoder[s].blocks[b], out);
    }
  }
  for (std::size_t s = 0; s < tpa.size(); ++s) {
    out.emplace_back("tpa." + std::to_string(s) + ".proj_weight", tpa[s].proj_weight);
    out.emplace_back("tpa." + std::to_string(s) + ".proj_bias", tpa[s].proj_bias);
  }
  for (std::size_t s = 0; s < decoder.size(); ++s) {
    const std::string prefix = "decoder." + std::to_string(s);
    out.emplace_back(prefix + ".up_weight", decoder[s].up_weight);
    out.emplace_back(prefix + ".up_bias", decoder[s].up_bias);
    for (std::size_t b = 0; b < decoder[s].blocks.size(); ++b) {
      append_parameters(prefix + ".conv" + std::to_string(b), decoder[s].blocks[b], out);
    }
  }
  out.emplace_back("head.weight", head.weight);
  out.emplace_back("head.bias", head.bias);
  return out;
}

template <typename Scalar>
Index NetworkParams<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename Scalar>
void NetworkParams<Scalar>::zero_grad() const {
  for (auto [name, t] : named_parameters()) t.zero_grad();
}

template <typename Scalar>
NetworkParams<Scalar> init_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Scalar slope = Scalar(config.negative_slope);
  NetworkParams<Scalar> params;
  const int stages = config.stages();
  for (int s = 0; s < stages; ++s) {
    StageSpec spec{s == 0 ? config.input_channels : config.channels[s - 1], config.channels[s], s > 0,
                   config.conv_per_stage};
    params.encoder.push_back(make_encoder_stage<Scalar>(spec, rng, slope));
  }
  if (uses_attention(config.variant)) {
    for (int s = 0; s < stages; ++s) params.tpa.push_back(make_tpa_params<Scalar>(config.channels[s], rng));
  }
  for (int s = 0; s + 1 < stages; ++s) {
    StageSpec spec{config.channels[s + 1], config.channels[s], false, 2};
    params.decoder.push_back(make_decoder_stage<Scalar>(spec, rng, slope));
  }
  params.head = make_seg_head<Scalar>(config.channels[0], rng);
  return params;
}

namespace {

void check_inputs(const Shape& x_t, const Shape* x_prev, const NetworkConfig& config) {
  config.validate();
  if (x_t.size() != 4 || x_t[0] != config.input_channels) {
    throw ShapeError("network input must be " + std::to_string(config.input_channels) +
                     " x D x H x W, got " + to_string(x_t));
  }
  if (x_prev && *x_prev != x_t) {
    throw ShapeError("current " + to_string(x_t) + " and prior " + to_string(*x_prev) + " differ in shape");
  }
  const Index factor = Index(1) << (config.stages() - 1);
  for (std::size_t axis = 1; axis < 4; ++axis) {
    if (x_t[axis] % factor != 0) {
      throw ConfigError("input " + to_string(x_t) + " not divisible by " + std::to_string(factor));
    }
  }
}

template <typename Scalar>
Tensor<Scalar> decode(std::vector<Tensor<Scalar>> skips, const NetworkParams<Scalar>& params) {
  Tensor<Scalar> x = skips.back();
  for (int s = int(params.decoder.size()) - 1; s >= 0; --s) {
    x = decoder_stage_forward(x, skips[s], params.decoder[s]);
  }
  return seg_head(x, params.head);
}

}  // namespace

template <typename Scalar>
std::vector<Tensor<Scalar>> encode(const Tensor<Scalar>& x, const NetworkParams<Scalar>& params) {
  std::vector<Tensor<Scalar>> levels;
  Tensor<Scalar> y = x;
  for (const auto& stage : params.encoder) {
    y = encoder_stage_forward(y, stage);
    levels.push_back(y);
  }
  return levels;
}

template <typename Scalar>
ForwardResult<Scalar> forward_tpa(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                                  const NetworkParams<Scalar>& params, const NetworkConfig& config) {
  check_inputs(x_t.shape(), &x_prev.shape(), config);
  if (params.tpa.size() != params.encoder.size()) {
    throw ConfigError("parameters lack attention generators; initialise with an attention variant");
  }
  auto current = encode(x_t, params);
  auto prior = encode(x_prev, params);
  ForwardResult<Scalar> result;
  std::vector<Tensor<Scalar>> skips;
  for (std::size_t m = 0; m < current.size(); ++m) {
    auto out = tpa_forward(current[m], prior[m], params.tpa[m]);
    skips.push_back(out.features);
    result.weights.push_back(out.weights);
    result.features.push_back({current[m], prior[m]});
  }
  result.logits = decode(std::move(skips), params);
  return result;
}

template <typename Scalar>
ForwardResult<Scalar> forward_no_tpa(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                                     const NetworkParams<Scalar>& params, const NetworkConfig& config) {
  check_inputs(x_t.shape(), &x_prev.shape(), config);
  auto current = encode(x_t, params);
  auto prior = encode(x_prev, params);
  ForwardResult<Scalar> result;
  std::vector<Tensor<Scalar>> skips;
  for (std::size_t m = 0; m < current.size(); ++m) {
    skips.push_back(fixed_difference_modulation(current[m], prior[m]));
    result.features.push_back({current[m], prior[m]});
  }
  result.logits = decode(std::move(skips), params);
  return result;
}

template <typename Scalar>
ForwardResult<Scalar> forward_single(const Tensor<Scalar>& x_t, const NetworkParams<Scalar>& params,
                                     const NetworkConfig& config) {
  check_inputs(x_t.shape(), nullptr, config);
  auto current = encode(x_t, params);
  ForwardResult<Scalar> result;
  for (const auto& k : current) result.features.push_back({k, Tensor<Scalar>()});
  result.logits = decode(std::move(current), params);
  return result;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                              const NetworkParams<Scalar>& params, const NetworkConfig& config) {
  switch (config.variant) {
    case Variant::full:
    case Variant::no_bcr: return forward_tpa(x_t, x_prev, params, config);
    case Variant::no_tpa: return forward_no_tpa(x_t, x_prev, params, config);
    case Variant::single: return forward_single(x_t, params, config);
  }
  return forward_tpa(x_t, x_prev, params, config);
}

Index parameter_count(const NetworkConfig& config) {
  config.validate();
  auto block = [](Index cin, Index cout) { return cout * (27 * cin + 3); };
  const auto& c = config.channels;
  Index n = 0;
  for (int s = 0; s < config.stages(); ++s) {
    const Index cin = s == 0 ? config.input_channels : c[s - 1];
    n += block(cin, c[s]) + (config.conv_per_stage - 1) * block(c[s], c[s]);
    if (uses_attention(config.variant)) n += c[s] + 1;
  }
  for (int s = 0; s + 1 < config.stages(); ++s) {
    n += c[s + 1] * c[s] * 8 + c[s];
    n += block(2 * c[s], c[s]) + block(c[s], c[s]);
  }
  n += 2 * c[0] + 2;
  return n;
}

std::vector<Shape> encoder_feature_shapes(const NetworkConfig& config) {
  config.validate();
  std::vector<Shape> shapes;
  auto extents = config.extents;
  for (int s = 0; s < config.stages(); ++s) {
    if (s > 0) {
      for (auto& e : extents) e = (e + 2 - 3) / 2 + 1;
    }
    shapes.push_back({config.channels[s], extents[0], extents[1], extents[2]});
  }
  return shapes;
}

#define LONSEG_INSTANTIATE_NETWORK(S)                                                                      \
  template struct NetworkParams<S>;                                                                        \
  template NetworkParams<S> init_network(const NetworkConfig&, std::uint64_t);                             \
  template std::vector<Tensor<S>> encode(const Tensor<S>&, const NetworkParams<S>&);                      \
  template ForwardResult<S> forward(const Tensor<S>&, const Tensor<S>&, const NetworkParams<S>&,          \
                                    const NetworkConfig&);                                                 \
  template ForwardResult<S> forward_tpa(const Tensor<S>&, const Tensor<S>&, const NetworkParams<S>&,      \
                                        const NetworkConfig&);                                             \
  template ForwardResult<S> forward_no_tpa(const Tensor<S>&, const Tensor<S>&, const NetworkParams<S>&,   \
                                           const NetworkConfig&);                                          \
  template ForwardResult<S> forward_single(const Tensor<S>&, const NetworkParams<S>&, const NetworkConfig&);

LONSEG_INSTANTIATE_NETWORK(float)
LONSEG_INSTANTIATE_NETWORK(double)

}  // namespace lonseg
