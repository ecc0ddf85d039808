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
#include "lonseg/ops.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace lonseg {

namespace {

enum class Broadcast { same, scalar, channel };

template <typename Scalar>
Broadcast resolve_broadcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.dim(0)) return Broadcast::channel;
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b.shape()) + " against " +
                   to_string(a.shape()));
}

// Right-hand side expanded to the left-hand side's element count.
template <typename Scalar>
Buffer<Scalar> expand(const Buffer<Scalar>& b, Broadcast kind, Index n) {
  switch (kind) {
    case Broadcast::same: return b;
    case Broadcast::scalar: return Buffer<Scalar>::Constant(n, b[0]);
    case Broadcast::channel: {
      const Index inner = n / b.size();
      Buffer<Scalar> out(n);
      for (Index c = 0; c < b.size(); ++c) out.segment(c * inner, inner).setConstant(b[c]);
      return out;
    }
  }
  return b;
}

// Adjoint of expand(): sums gradient contributions back to the rhs shape.
template <typename Scalar>
Buffer<Scalar> reduce(const Buffer<Scalar>& g, Broadcast kind, Index m) {
  switch (kind) {
    case Broadcast::same: return g;
    case Broadcast::scalar: return Buffer<Scalar>::Constant(1, g.sum());
    case Broadcast::channel: {
      const Index inner = g.size() / m;
      Buffer<Scalar> out(m);
      for (Index c = 0; c < m; ++c) out[c] = g.segment(c * inner, inner).sum();
      return out;
    }
  }
  return g;
}

template <typename Scalar>
Shape trailing(const Shape& shape) {
  return Shape(shape.begin() + 1, shape.end());
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const auto kind = resolve_broadcast(a, b, "add");
  const Index m = b.numel();
  Buffer<Scalar> out = a.value() + expand(b.value(), kind, a.numel());
  return Tensor<Scalar>::record("add", a.shape(), std::move(out), {a, b},
      [kind, m](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        if (gi[0]) *gi[0] += g;
        if (gi[1]) *gi[1] += reduce(g, kind, m);
      });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const auto kind = resolve_broadcast(a, b, "sub");
  const Index m = b.numel();
  Buffer<Scalar> out = a.value() - expand(b.value(), kind, a.numel());
  return Tensor<Scalar>::record("sub", a.shape(), std::move(out), {a, b},
      [kind, m](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        if (gi[0]) *gi[0] += g;
        if (gi[1]) *gi[1] -= reduce(g, kind, m);
      });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const auto kind = resolve_broadcast(a, b, "mul");
  const Index m = b.numel();
  Buffer<Scalar> bx = expand(b.value(), kind, a.numel());
  Buffer<Scalar> out = a.value() * bx;
  return Tensor<Scalar>::record("mul", a.shape(), std::move(out), {a, b},
      [kind, m, a, bx = std::move(bx)](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        if (gi[0]) *gi[0] += g * bx;
        if (gi[1]) *gi[1] += reduce<Scalar>(g * a.value(), kind, m);
      });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const auto kind = resolve_broadcast(a, b, "div");
  const Index m = b.numel();
  Buffer<Scalar> bx = expand(b.value(), kind, a.numel());
  Buffer<Scalar> out = a.value() / bx;
  return Tensor<Scalar>::record("div", a.shape(), std::move(out), {a, b},
      [kind, m, a, bx = std::move(bx)](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        if (gi[0]) *gi[0] += g / bx;
        if (gi[1]) *gi[1] -= reduce<Scalar>(g * a.value() / bx.square(), kind, m);
      });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar b) {
  Buffer<Scalar> out = a.value() + b;
  return Tensor<Scalar>::record("add_scalar", a.shape(), std::move(out), {a},
      [](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g; });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar b) {
  Buffer<Scalar> out = a.value() * b;
  return Tensor<Scalar>::record("mul_scalar", a.shape(), std::move(out), {a},
      [b](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g * b; });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, Scalar b) {
  Buffer<Scalar> out = a.value() / b;
  return Tensor<Scalar>::record("div_scalar", a.shape(), std::move(out), {a},
      [b](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g / b; });
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  Buffer<Scalar> out = -a.value();
  return Tensor<Scalar>::record("neg", a.shape(), std::move(out), {a},
      [](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] -= g; });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  Buffer<Scalar> y = a.value().tanh();
  return Tensor<Scalar>::record("tanh", a.shape(), y, {a},
      [y](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        *gi[0] += g * (Scalar(1) - y.square());
      });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Buffer<Scalar> y = a.value().unaryExpr([](Scalar v) {
    // Branches keep exp() from overflowing for large |v|.
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return Tensor<Scalar>::record("sigmoid", a.shape(), y, {a},
      [y](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        *gi[0] += g * y * (Scalar(1) - y);
      });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar negative_slope) {
  Buffer<Scalar> slope = (a.value() >= Scalar(0)).select(Buffer<Scalar>::Ones(a.numel()),
                                                         Buffer<Scalar>::Constant(a.numel(), negative_slope));
  Buffer<Scalar> out = a.value() * slope;
  return Tensor<Scalar>::record("leaky_relu", a.shape(), std::move(out), {a},
      [slope = std::move(slope)](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        *gi[0] += g * slope;
      });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  Buffer<Scalar> out = a.value().square();
  return Tensor<Scalar>::record("square", a.shape(), std::move(out), {a},
      [a](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        *gi[0] += Scalar(2) * g * a.value();
      });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a) {
  Buffer<Scalar> y = a.value().sqrt();
  return Tensor<Scalar>::record("sqrt", a.shape(), y, {a},
      [y](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        *gi[0] += g / (Scalar(2) * y);
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  return Tensor<Scalar>::record("sum", Shape{1}, Buffer<Scalar>::Constant(1, a.value().sum()), {a},
      [](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g[0]; });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  const Index n = a.numel();
  return Tensor<Scalar>::record("mean", Shape{1},
      Buffer<Scalar>::Constant(1, a.value().sum() / Scalar(n)), {a},
      [n](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g[0] / Scalar(n); });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  return Tensor<Scalar>::record("reshape", std::move(shape), a.value(), {a},
      [](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) { *gi[0] += g; });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index begin, Index count) {
  if (a.rank() < 1 || begin < 0 || count < 1 || begin + count > a.dim(0)) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + to_string(a.shape()));
  }
  const Index inner = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  Buffer<Scalar> out = a.value().segment(begin * inner, count * inner);
  return Tensor<Scalar>::record("slice", std::move(shape), std::move(out), {a},
      [begin, count, inner](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        gi[0]->segment(begin * inner, count * inner) += g;
      });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape tail = trailing<Scalar>(parts.front().shape());
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.rank() < 1 || trailing<Scalar>(p.shape()) != tail) {
      throw ShapeError("concat: " + to_string(p.shape()) + " incompatible with " +
                       to_string(parts.front().shape()));
    }
    rows += p.dim(0);
  }
  Shape shape = parts.front().shape();
  shape[0] = rows;
  Buffer<Scalar> out(numel(shape));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    out.segment(offset, p.numel()) = p.value();
    offset += p.numel();
  }
  return Tensor<Scalar>::record("concat", std::move(shape), std::move(out), parts,
      [offsets](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        for (std::size_t i = 0; i < gi.size(); ++i) {
          if (gi[i]) *gi[i] += g.segment(offsets[i], gi[i]->size());
        }
      });
}

template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  std::vector<Tensor<Scalar>> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw ShapeError("stack: " + to_string(p.shape()) + " differs from " +
                       to_string(parts.front().shape()));
    }
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    rows.push_back(reshape(p, std::move(s)));
  }
  return concat(rows);
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() < 1) throw ShapeError("softmax needs rank >= 1");
  const Index classes = logits.dim(0);
  const Index inner = logits.numel() / classes;
  using Mat = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  Mat x(logits.value().data(), classes, inner);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y =
      (x.rowwise() - x.colwise().maxCoeff()).array().exp().matrix();
  y.array().rowwise() /= y.colwise().sum().array();
  Buffer<Scalar> out = Eigen::Map<Buffer<Scalar>>(y.data(), y.size());
  return Tensor<Scalar>::record("softmax", logits.shape(), out, {logits},
      [out, classes, inner](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        Mat ym(out.data(), classes, inner);
        Mat gm(g.data(), classes, inner);
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dot = (ym.array() * gm.array()).colwise().sum();
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dx =
            (ym.array() * (gm.rowwise() - dot).array()).matrix();
        *gi[0] += Eigen::Map<const Buffer<Scalar>>(dx.data(), dx.size());
      });
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() < 1) throw ShapeError("log_softmax needs rank >= 1");
  const Index classes = logits.dim(0);
  const Index inner = logits.numel() / classes;
  using Mat = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  Mat x(logits.value().data(), classes, inner);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> peak = x.colwise().maxCoeff();
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> lse =
      peak.array() + (x.rowwise() - peak).array().exp().colwise().sum().log();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y = x.rowwise() - lse;
  Buffer<Scalar> out = Eigen::Map<Buffer<Scalar>>(y.data(), y.size());
  return Tensor<Scalar>::record("log_softmax", logits.shape(), out, {logits},
      [out, classes, inner](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        Mat ym(out.data(), classes, inner);
        Mat gm(g.data(), classes, inner);
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> total = gm.colwise().sum();
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dx =
            gm.array() - ym.array().exp().rowwise() * total.array();
        *gi[0] += Eigen::Map<const Buffer<Scalar>>(dx.data(), dx.size());
      });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool needs rank >= 3, got " + to_string(x.shape()));
  const Index voxels = x.dim(x.rank() - 3) * x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  const Index rows = x.numel() / voxels;
  Shape shape(x.shape().begin(), x.shape().end() - 3);
  if (shape.empty()) shape = {1};
  Buffer<Scalar> out(rows);
  for (Index r = 0; r < rows; ++r) out[r] = x.value().segment(r * voxels, voxels).sum() / Scalar(voxels);
  return Tensor<Scalar>::record("global_avg_pool", std::move(shape), std::move(out), {x},
      [rows, voxels](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        for (Index r = 0; r < rows; ++r) gi[0]->segment(r * voxels, voxels) += g[r] / Scalar(voxels);
      });
}

template <typename Scalar>
Tensor<Scalar> instance_norm3d(const Tensor<Scalar>& x, Scalar eps, const Tensor<Scalar>& scale,
                               const Tensor<Scalar>& shift) {
  if (x.rank() != 4) throw ShapeError("instance_norm3d expects C x D x H x W, got " + to_string(x.shape()));
  if (!(eps > 0)) throw std::invalid_argument("instance_norm3d: eps must be positive");
  const Index channels = x.dim(0);
  const Index voxels = x.numel() / channels;
  const bool affine = scale.defined();
  if (affine != shift.defined()) throw std::invalid_argument("instance_norm3d: scale and shift go together");
  if (affine && (scale.shape() != Shape{channels} || shift.shape() != Shape{channels})) {
    throw ShapeError("instance_norm3d: affine parameters must be [" + std::to_string(channels) + "]");
  }

  Buffer<Scalar> normalized(x.numel());
  Buffer<Scalar> inv_std(channels);
  for (Index c = 0; c < channels; ++c) {
    auto seg = x.value().segment(c * voxels, voxels);
    const Scalar mu = seg.sum() / Scalar(voxels);
    const Scalar var = (seg - mu).square().sum() / Scalar(voxels);
    inv_std[c] = Scalar(1) / std::sqrt(var + eps);
    normalized.segment(c * voxels, voxels) = (seg - mu) * inv_std[c];
  }
  Buffer<Scalar> out = normalized;
  if (affine) {
    for (Index c = 0; c < channels; ++c) {
      out.segment(c * voxels, voxels) = normalized.segment(c * voxels, voxels) * scale.value()[c] +
                                        shift.value()[c];
    }
  }
  std::vector<Tensor<Scalar>> inputs{x};
  if (affine) {
    inputs.push_back(scale);
    inputs.push_back(shift);
  }
  return Tensor<Scalar>::record("instance_norm3d", x.shape(), std::move(out), inputs,
      [channels, voxels, affine, scale, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        for (Index c = 0; c < channels; ++c) {
          auto gc = g.segment(c * voxels, voxels);
          auto xhat = normalized.segment(c * voxels, voxels);
          if (affine) {
            if (gi[1]) (*gi[1])[c] += (gc * xhat).sum();
            if (gi[2]) (*gi[2])[c] += gc.sum();
          }
          if (gi[0]) {
            const Scalar gamma = affine ? scale.value()[c] : Scalar(1);
            Buffer<Scalar> dxhat = gc * gamma;
            const Scalar n = Scalar(voxels);
            const Scalar sum_d = dxhat.sum();
            const Scalar sum_dx = (dxhat * xhat).sum();
            gi[0]->segment(c * voxels, voxels) += inv_std[c] / n * (n * dxhat - sum_d - xhat * sum_dx);
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) || bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("linear: x " + to_string(x.shape()) + ", weight " + to_string(weight.shape()) +
                     ", bias " + to_string(bias.shape()));
  }
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  const Index n = x.dim(0), k = x.dim(1), m = weight.dim(0);
  CMap xm(x.value().data(), n, k);
  CMap wm(weight.value().data(), m, k);
  RowMat y = xm * wm.transpose();
  y.rowwise() += bias.value().matrix().transpose();
  Buffer<Scalar> out = Eigen::Map<Buffer<Scalar>>(y.data(), y.size());
  return Tensor<Scalar>::record("linear", Shape{n, m}, std::move(out), {x, weight, bias},
      [x, weight, n, k, m](const Buffer<Scalar>& g, const std::vector<Buffer<Scalar>*>& gi) {
        CMap gm(g.data(), n, m);
        if (gi[0]) {
          RowMat dx = gm * CMap(weight.value().data(), m, k);
          *gi[0] += Eigen::Map<const Buffer<Scalar>>(dx.data(), dx.size());
        }
        if (gi[1]) {
          RowMat dw = gm.transpose() * CMap(x.value().data(), n, k);
          *gi[1] += Eigen::Map<const Buffer<Scalar>>(dw.data(), dw.size());
        }
        if (gi[2]) *gi[2] += gm.colwise().sum().transpose().array();
      });
}

#define LONSEG_INSTANTIATE_OPS(S)                                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> add(const Tensor<S>&, S);                                                 \
  template Tensor<S> mul(const Tensor<S>&, S);                                                 \
  template Tensor<S> div(const Tensor<S>&, S);                                                 \
  template Tensor<S> neg(const Tensor<S>&);                                                    \
  template Tensor<S> tanh(const Tensor<S>&);                                                   \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                \
  template Tensor<S> leaky_relu(const Tensor<S>&, S);                                          \
  template Tensor<S> square(const Tensor<S>&);                                                 \
  template Tensor<S> sqrt(const Tensor<S>&);                                                   \
  template Tensor<S> sum(const Tensor<S>&);                                                    \
  template Tensor<S> mean(const Tensor<S>&);                                                   \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                         \
  template Tensor<S> slice(const Tensor<S>&, Index, Index);                                    \
  template Tensor<S> concat(const std::vector<Tensor<S>>&);                                    \
  template Tensor<S> stack(const std::vector<Tensor<S>>&);                                     \
  template Tensor<S> softmax(const Tensor<S>&);                                                \
  template Tensor<S> log_softmax(const Tensor<S>&);                                            \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                        \
  template Tensor<S> instance_norm3d(const Tensor<S>&, S, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

LONSEG_INSTANTIATE_OPS(float)
LONSEG_INSTANTIATE_OPS(double)

}  // namespace lonseg
