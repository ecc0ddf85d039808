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
#include "lonseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "lonseg/conv.hpp"
#include "lonseg/layers.hpp"
#include "lonseg/losses.hpp"
#include "lonseg/network.hpp"
#include "lonseg/ops.hpp"
#include "lonseg/tpa.hpp"

namespace lonseg {

namespace {

template <typename To, typename From>
Tensor<To> convert(const Tensor<From>& t, bool requires_grad = false) {
  return Tensor<To>(t.shape(), t.value().template cast<To>().eval(), requires_grad);
}

template <typename In>
using ScalarOf = typename std::decay_t<In>::value_type::scalar_type;

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                      double min_magnitude = 0.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Buffer<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) {
    double x = dist(rng);
    while (std::abs(x) < min_magnitude) x = dist(rng);
    v[i] = x;
  }
  return TensorD(std::move(shape), std::move(v));
}

// Projects y onto fixed random weights so every output entry gets a distinct cotangent.
template <typename Scalar>
Tensor<Scalar> project(const Tensor<Scalar>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Buffer<Scalar> r(y.numel());
  for (Index i = 0; i < r.size(); ++i) r[i] = Scalar(dist(rng));
  return sum(y * Tensor<Scalar>(y.shape(), std::move(r)));
}

TensorD binary_target(Shape shape, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  Buffer<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = coin(rng) ? 1.0 : 0.0;
  return TensorD(std::move(shape), std::move(v));
}

template <typename Scalar>
ConvBlock<Scalar> rebind(const ConvBlock<double>& proto, const std::vector<Tensor<Scalar>>& in, std::size_t& k) {
  ConvBlock<Scalar> b;
  b.weight = in[k++];
  b.bias = in[k++];
  b.norm_scale = in[k++];
  b.norm_shift = in[k++];
  b.stride = proto.stride;
  b.negative_slope = Scalar(proto.negative_slope);
  b.norm_eps = Scalar(proto.norm_eps);
  return b;
}

// Rebuilds a network whose parameters are the given leaves, in named_parameters() order.
template <typename Scalar>
NetworkParams<Scalar> rebind(const NetworkParams<double>& proto, const std::vector<Tensor<Scalar>>& in,
                             std::size_t& k) {
  NetworkParams<Scalar> q;
  for (const auto& stage : proto.encoder) {
    EncoderStage<Scalar> s{stage.spec, {}};
    for (const auto& b : stage.blocks) s.blocks.push_back(rebind(b, in, k));
    q.encoder.push_back(std::move(s));
  }
  for (const auto& t : proto.tpa) {
    TpaParams<Scalar> p;
    p.proj_weight = in[k++];
    p.proj_bias = in[k++];
    p.eps = Scalar(t.eps);
    q.tpa.push_back(std::move(p));
  }
  for (const auto& stage : proto.decoder) {
    DecoderStage<Scalar> s;
    s.spec = stage.spec;
    s.up_weight = in[k++];
    s.up_bias = in[k++];
    for (const auto& b : stage.blocks) s.blocks.push_back(rebind(b, in, k));
    q.decoder.push_back(std::move(s));
  }
  q.head.weight = in[k++];
  q.head.bias = in[k++];
  return q;
}

class Suite {
 public:
  Suite(const GradcheckOptions& options, GradcheckReport& report)
      : options_(options), report_(report), pick_(options.seed ^ 0x9c4ULL) {
    tolerance_ = options.tolerance > 0 ? options.tolerance : (options.single_precision ? 1e-3 : 1e-5);
  }

  template <typename Fn>
  void check(const std::string& name, Fn fn, const std::vector<TensorD>& inputs) {
    const GradFn<double> reference = fn;
    if (options_.single_precision) {
      const GradFn<float> f = fn;
      report_.entries.push_back(check_gradients_against<float>(name, f, reference, inputs, options_.step, tolerance_,
                                                               options_.max_entries_per_input, pick_));
    } else {
      report_.entries.push_back(check_gradients_against<double>(name, reference, reference, inputs, options_.step,
                                                                tolerance_, options_.max_entries_per_input, pick_));
    }
  }

 private:
  const GradcheckOptions& options_;
  GradcheckReport& report_;
  std::mt19937_64 pick_;
  double tolerance_ = 0;
};

void run_suite(const GradcheckOptions& options, GradcheckReport& report) {
  Suite suite(options, report);
  std::mt19937_64 rng(options.seed);
  auto rt = [&](Shape s, double lo = -1.0, double hi = 1.0, double away = 0.0) {
    return random_tensor(std::move(s), rng, lo, hi, away);
  };
  const std::uint64_t p = options.seed + 17;
#define LONSEG_S ScalarOf<decltype(in)>

  suite.check("add", [&](const auto& in) { return project(in[0] + in[1], p); }, {rt({2, 3, 4}), rt({2, 3, 4})});
  suite.check("add_channel_broadcast", [&](const auto& in) { return project(in[0] + in[1], p); },
              {rt({3, 2, 2, 2}), rt({3})});
  suite.check("sub", [&](const auto& in) { return project(in[0] - in[1], p); }, {rt({2, 3, 4}), rt({1})});
  suite.check("mul", [&](const auto& in) { return project(in[0] * in[1], p); }, {rt({2, 3, 4}), rt({2, 3, 4})});
  suite.check("mul_channel_broadcast", [&](const auto& in) { return project(in[0] * in[1], p); },
              {rt({3, 2, 2, 2}), rt({3})});
  suite.check("div", [&](const auto& in) { return project(in[0] / in[1], p); },
              {rt({2, 3, 4}), rt({2, 3, 4}, 0.5, 2.0)});
  suite.check("scalar_ops",
              [&](const auto& in) {
                using S = LONSEG_S;
                return project((in[0] + S(0.5)) * S(-1.5) / S(3), p);
              },
              {rt({5})});
  suite.check("neg", [&](const auto& in) { return project(-in[0], p); }, {rt({5})});
  suite.check("tanh", [&](const auto& in) { return project(tanh(in[0]), p); }, {rt({2, 5}, -2, 2)});
  suite.check("sigmoid", [&](const auto& in) { return project(sigmoid(in[0]), p); }, {rt({2, 5}, -4, 4)});
  suite.check("leaky_relu", [&](const auto& in) { return project(leaky_relu(in[0], LONSEG_S(0.01)), p); },
              {rt({2, 6}, -1, 1, 0.05)});
  suite.check("square", [&](const auto& in) { return project(square(in[0]), p); }, {rt({7})});
  suite.check("sqrt", [&](const auto& in) { return project(sqrt(in[0]), p); }, {rt({7}, 0.5, 2.0)});
  suite.check("sum", [&](const auto& in) { return sum(in[0]) * LONSEG_S(0.7); }, {rt({3, 4})});
  suite.check("mean", [&](const auto& in) { return mean(in[0]) * LONSEG_S(1.3); }, {rt({3, 4})});
  suite.check("reshape", [&](const auto& in) { return project(reshape(in[0], {4, 3}), p); }, {rt({3, 4})});
  suite.check("slice", [&](const auto& in) { return project(slice(in[0], 1, 2), p); }, {rt({4, 3})});
  suite.check("concat", [&](const auto& in) { return project(concat<LONSEG_S>({in[0], in[1]}), p); },
              {rt({2, 3}), rt({1, 3})});
  suite.check("stack", [&](const auto& in) { return project(stack<LONSEG_S>({in[0], in[1]}), p); },
              {rt({2, 3}), rt({2, 3})});
  suite.check("softmax", [&](const auto& in) { return project(softmax(in[0]), p); }, {rt({2, 2, 2, 3}, -3, 3)});
  suite.check("log_softmax", [&](const auto& in) { return project(log_softmax(in[0]), p); },
              {rt({2, 2, 2, 3}, -3, 3)});
  suite.check("global_avg_pool", [&](const auto& in) { return project(global_avg_pool(in[0]), p); },
              {rt({2, 3, 2, 2, 2})});
  suite.check("instance_norm3d",
              [&](const auto& in) { return project(instance_norm3d(in[0], LONSEG_S(1e-5), in[1], in[2]), p); },
              {rt({2, 3, 2, 2}), rt({2}, 0.5, 1.5), rt({2})});
  suite.check("linear", [&](const auto& in) { return project(linear(in[0], in[1], in[2]), p); },
              {rt({2, 4}), rt({3, 4}), rt({3})});
  {
    ScopedConvAlgorithm direct(ConvAlgorithm::direct);
    suite.check("conv3d", [&](const auto& in) { return project(conv3d(in[0], in[1], in[2], 1), p); },
                {rt({2, 3, 4, 3}), rt({3, 2, 3, 3, 3}), rt({3})});
    suite.check("conv3d_stride2", [&](const auto& in) { return project(conv3d(in[0], in[1], in[2], 2), p); },
                {rt({2, 4, 4, 3}), rt({2, 2, 3, 3, 3}), rt({2})});
  }
  {
    ScopedConvAlgorithm gemm(ConvAlgorithm::gemm);
    suite.check("conv3d_gemm", [&](const auto& in) { return project(conv3d(in[0], in[1], in[2], 2), p); },
                {rt({2, 4, 3, 4}), rt({3, 2, 3, 3, 3}), rt({3})});
  }
  suite.check("conv_transpose3d", [&](const auto& in) { return project(conv_transpose3d(in[0], in[1], in[2]), p); },
              {rt({3, 2, 2, 1}), rt({3, 2, 2, 2, 2}), rt({2})});
  suite.check("pointwise_conv3d", [&](const auto& in) { return project(pointwise_conv3d(in[0], in[1], in[2]), p); },
              {rt({3, 2, 2, 2}), rt({2, 3}), rt({2})});

  {
    std::mt19937_64 init(options.seed + 1);
    const auto block = make_conv_block<double>(2, 3, 1, init, kDefaultNegativeSlope);
    suite.check("conv_block",
                [&](const auto& in) {
                  std::size_t k = 1;
                  return project(conv_block_forward(rebind(block, in, k), in[0]), p);
                },
                {rt({2, 3, 3, 3}), block.weight.detach(), block.bias.detach(), rt({3}, 0.5, 1.5), rt({3}, -0.5, 0.5)});
  }
  {
    std::mt19937_64 init(options.seed + 2);
    const auto tpa = make_tpa_params<double>(3, init);
    suite.check("tpa_block",
                [&](const auto& in) {
                  using S = LONSEG_S;
                  TpaParams<S> params{in[2], in[3], S(kTpaNormEps)};
                  return project(tpa_forward(in[0], in[1], params).features, p);
                },
                {rt({3, 2, 3, 2}), rt({3, 2, 3, 2}), tpa.proj_weight.detach(), rt({1}, -0.5, 0.5)});
    suite.check("fixed_difference_modulation",
                [&](const auto& in) { return project(fixed_difference_modulation(in[0], in[1]), p); },
                {rt({3, 2, 3, 2}), rt({3, 2, 3, 2})});
  }
  {
    const auto target = binary_target({2, 3, 3}, rng);
    suite.check("dice_loss", [&](const auto& in) { return dice_loss(in[0], convert<LONSEG_S>(target)); },
                {rt({2, 2, 3, 3}, -2, 2)});
    suite.check("cross_entropy_loss",
                [&](const auto& in) { return cross_entropy_loss(in[0], convert<LONSEG_S>(target)); },
                {rt({2, 2, 3, 3}, -2, 2)});
    const BcrConfig bcr;
    suite.check("bcr_loss", [&](const auto& in) { return bcr_level_loss(in[0], in[1], 4, 3, bcr); },
                {rt({2, 2, 2, 2}, -0.3, 0.3), rt({2, 2, 2, 2}, -0.3, 0.3)});
    BcrConfig mean_cfg;
    mean_cfg.reduction = BcrReduction::mean_squared;
    suite.check("bcr_loss_mean", [&](const auto& in) { return bcr_level_loss(in[0], in[1], 3, 3, mean_cfg); },
                {rt({2, 2, 2, 2}), rt({2, 2, 2, 2})});
  }

  for (Variant variant : {Variant::full, Variant::no_tpa}) {
    NetworkConfig config;
    config.channels = {2, 4};
    config.extents = {4, 4, 4};
    config.variant = variant;
    const auto params = init_network<double>(config, options.seed + 3);
    const auto target = binary_target({4, 4, 4}, rng);
    std::vector<TensorD> leaves;
    for (const auto& [name, t] : params.named_parameters()) leaves.push_back(t.detach());
    leaves.push_back(random_tensor({1, 4, 4, 4}, rng));
    leaves.push_back(random_tensor({1, 4, 4, 4}, rng));
    suite.check(variant == Variant::full ? "network_e2e" : "network_e2e_no_tpa",
                [&](const auto& in) {
                  using S = LONSEG_S;
                  std::size_t k = 0;
                  const auto q = rebind(params, in, k);
                  const auto fwd = forward(in[k], in[k + 1], q, config);
                  return total_loss(fwd.logits, convert<S>(target), fwd.features, 4, 3, LossWeights{}, BcrConfig{})
                      .total;
                },
                leaves);
  }
#undef LONSEG_S
}

}  // namespace

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.passed) out.push_back(e.component);
  }
  return out;
}

void write_report(std::ostream& out, const GradcheckReport& report) {
  char line[160];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof(line), "%-28s checked=%-5lld max_abs=%.3e max_rel=%.3e tol=%.0e %s\n",
                  e.component.c_str(), static_cast<long long>(e.checked), e.max_abs_error, e.max_rel_error,
                  e.tolerance, e.passed ? "PASS" : "FAIL");
    out << line;
  }
  const auto failed = report.failures();
  out << (failed.empty() ? "gradcheck: all components passed\n" : "gradcheck: FAILED");
  for (std::size_t i = 0; i < failed.size(); ++i) out << (i ? ", " : " ") << failed[i];
  if (!failed.empty()) out << '\n';
}

template <typename Scalar>
GradcheckEntry check_gradients_against(const std::string& component, const GradFn<Scalar>& f,
                                       const GradFn<double>& reference, const std::vector<Tensor<double>>& inputs,
                                       double step, double tolerance, Index max_entries, std::mt19937_64& rng) {
  GradcheckEntry entry;
  entry.component = component;
  entry.tolerance = tolerance;
  std::vector<Tensor<Scalar>> leaves;
  std::vector<TensorD> probes;
  for (const auto& t : inputs) {
    leaves.push_back(convert<Scalar>(t, true));
    probes.push_back(convert<double>(t));
  }
  f(leaves).backward();

  double max_abs = 0, max_analytic = 0, max_numeric = 0;
  NoGradGuard guard;
  for (std::size_t n = 0; n < leaves.size(); ++n) {
    const auto& leaf = leaves[n];
    const Buffer<Scalar> analytic = leaf.has_grad() ? leaf.grad() : Buffer<Scalar>::Zero(leaf.numel());
    std::vector<Index> indices(std::size_t(leaf.numel()));
    std::iota(indices.begin(), indices.end(), Index(0));
    if (Index(indices.size()) > max_entries) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(std::size_t(max_entries));
      std::sort(indices.begin(), indices.end());
    }
    auto& data = probes[n].data();
    for (Index i : indices) {
      const double original = data[i];
      data[i] = original + step;
      const double plus = reference(probes).item();
      data[i] = original - step;
      const double minus = reference(probes).item();
      data[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NonFiniteError(component + ": non-finite value under finite-difference perturbation");
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = double(analytic[i]);
      max_abs = std::max(max_abs, std::abs(a - numeric));
      max_analytic = std::max(max_analytic, std::abs(a));
      max_numeric = std::max(max_numeric, std::abs(numeric));
      ++entry.checked;
    }
  }
  entry.max_abs_error = max_abs;
  entry.max_rel_error = max_abs / std::max({max_analytic, max_numeric, 1e-8});
  entry.passed = entry.max_rel_error < tolerance;
  return entry;
}

template <typename Scalar>
GradcheckEntry check_gradients(const std::string& component, const GradFn<Scalar>& f,
                               const std::vector<Tensor<Scalar>>& inputs, double step, double tolerance,
                               Index max_entries, std::mt19937_64& rng) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return check_gradients_against<double>(component, f, f, inputs, step, tolerance, max_entries, rng);
  } else {
    // Differences in the input precision.
    std::vector<TensorD> wide;
    for (const auto& t : inputs) wide.push_back(convert<double>(t));
    const GradFn<double> reference = [&](const std::vector<TensorD>& in) {
      std::vector<Tensor<Scalar>> narrow;
      for (const auto& t : in) narrow.push_back(convert<Scalar>(t));
      return convert<double>(f(narrow));
    };
    return check_gradients_against<Scalar>(component, f, reference, wide, step, tolerance, max_entries, rng);
  }
}

template GradcheckEntry check_gradients_against(const std::string&, const GradFn<float>&, const GradFn<double>&,
                                                const std::vector<TensorD>&, double, double, Index,
                                                std::mt19937_64&);
template GradcheckEntry check_gradients_against(const std::string&, const GradFn<double>&, const GradFn<double>&,
                                                const std::vector<TensorD>&, double, double, Index,
                                                std::mt19937_64&);
template GradcheckEntry check_gradients(const std::string&, const GradFn<float>&, const std::vector<TensorF>&,
                                        double, double, Index, std::mt19937_64&);
template GradcheckEntry check_gradients(const std::string&, const GradFn<double>&, const std::vector<TensorD>&,
                                        double, double, Index, std::mt19937_64&);

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  run_suite(options, report);
  return report;
}

}  // namespace lonseg
