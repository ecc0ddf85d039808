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
#include "lonseg/conv.hpp"

#include <Eigen/Dense>

#include <type_traits>

namespace lonseg {

namespace {

thread_local ConvAlgorithm t_algorithm = ConvAlgorithm::automatic;

constexpr Index kTaps = 27;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;

struct Geometry {
  Index in_ch, out_ch;
  Index d, h, w;
  Index od, oh, ow;
  int stride;

  Index in_voxels() const { return d * h * w; }
  Index out_voxels() const { return od * oh * ow; }
};

Geometry conv_geometry(const Shape& in, const Shape& weight, const Shape& bias, int stride) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
  if (in.size() != 4) throw ShapeError("conv3d: input must be C x D x H x W, got " + to_string(in));
  if (weight.size() != 5 || weight[2] != 3 || weight[3] != 3 || weight[4] != 3) {
    throw ShapeError("conv3d: weight must be Co x Ci x 3 x 3 x 3, got " + to_string(weight));
  }
  if (weight[1] != in[0]) {
    throw ShapeError("conv3d: weight expects " + std::to_string(weight[1]) + " input channels, input " +
                     to_string(in) + " has " + std::to_string(in[0]));
  }
  if (bias != Shape{weight[0]}) throw ShapeError("conv3d: bias must be [" + std::to_string(weight[0]) + "]");
  Geometry g{in[0], weight[0], in[1], in[2], in[3], 0, 0, 0, stride};
  g.od = (g.d + 2 - 3) / stride + 1;
  g.oh = (g.h + 2 - 3) / stride + 1;
  g.ow = (g.w + 2 - 3) / stride + 1;
  return g;
}

template <typename Scalar>
bool use_direct() {
  switch (t_algorithm) {
    case ConvAlgorithm::direct: return true;
    case ConvAlgorithm::gemm: return false;
    case ConvAlgorithm::automatic: return std::is_same_v<Scalar, double>;
  }
  return true;
}

// Calls fn(out_offset, in_offset) for every valid (output voxel, input voxel)
// pair of one kernel tap, in output raster order.
template <typename Fn>
inline void for_each_tap_pair(const Geometry& g, Index kd, Index kh, Index kw, Fn&& fn) {
  for (Index z = 0; z < g.od; ++z) {
    const Index iz = z * g.stride + kd - 1;
    if (iz < 0 || iz >= g.d) continue;
    for (Index y = 0; y < g.oh; ++y) {
      const Index iy = y * g.stride + kh - 1;
      if (iy < 0 || iy >= g.h) continue;
      const Index out_row = (z * g.oh + y) * g.ow;
      const Index in_row = (iz * g.h + iy) * g.w;
      for (Index x = 0; x < g.ow; ++x) {
        const Index ix = x * g.stride + kw - 1;
        if (ix < 0 || ix >= g.w) continue;
        fn(out_row + x, in_row + ix);
      }
    }
  }
}

template <typename Scalar>
void direct_forward(const Geometry& g, const Scalar* x, const Scalar* wt, Scalar* out) {
  const Index in_vox = g.in_voxels(), out_vox = g.out_voxels();
  for (Index o = 0; o < g.out_ch; ++o) {
    Scalar* out_ch = out + o * out_vox;
    for (Index c = 0; c < g.in_ch; ++c) {
      const Scalar* in_ch = x + c * in_vox;
      const Scalar* taps = wt + (o * g.in_ch + c) * kTaps;
      for (Index kd = 0; kd < 3; ++kd)
        for (Index kh = 0; kh < 3; ++kh)
          for (Index kw = 0; kw < 3; ++kw) {
            const Scalar wv = taps[(kd * 3 + kh) * 3 + kw];
            for_each_tap_pair(g, kd, kh, kw, [&](Index oi, Index ii) { out_ch[oi] += wv * in_ch[ii]; });
          }
    }
  }
}

template <typename Scalar>
void direct_backward(const Geometry& g, const Scalar* x, const Scalar* wt, const Scalar* grad,
                     Scalar* dx, Scalar* dw) {
  const Index in_vox = g.in_voxels(), out_vox = g.out_voxels();
  for (Index o = 0; o < g.out_ch; ++o) {
    const Scalar* g_ch = grad + o * out_vox;
    for (Index c = 0; c < g.in_ch; ++c) {
      const Scalar* in_ch = x + c * in_vox;
      const Index tap0 = (o * g.in_ch + c) * kTaps;
      for (Index kd = 0; kd < 3; ++kd)
        for (Index kh = 0; kh < 3; ++kh)
          for (Index kw = 0; kw < 3; ++kw) {
            const Index tap = tap0 + (kd * 3 + kh) * 3 + kw;
            const Scalar wv = wt[tap];
            Scalar acc = 0;
            Scalar* dx_ch = dx ? dx + c * in_vox : nullptr;
            for_each_tap_pair(g, kd, kh, kw, [&](Index oi, Index ii) {
              acc += g_ch[oi] * in_ch[ii];
              if (dx_ch) dx_ch[ii] += wv * g_ch[oi];
            });
            if (dw) dw[tap] += acc;
          }
    }
  }
}

// Column matrix [Ci*27 x P], row (c, kd, kh, kw), zero where the tap reads padding.
template <typename Scalar>
RowMat<Scalar> im2col(const Geometry& g, const Scalar* x) {
  RowMat<Scalar> col = RowMat<Scalar>::Zero(g.in_ch * kTaps, g.out_voxels());
  for (Index c = 0; c < g.in_ch; ++c) {
    const Scalar* in_ch = x + c * g.in_voxels();
    for (Index kd = 0; kd < 3; ++kd)
      for (Index kh = 0; kh < 3; ++kh)
        for (Index kw = 0; kw < 3; ++kw) {
          Scalar* row = col.row(c * kTaps + (kd * 3 + kh) * 3 + kw).data();
          for_each_tap_pair(g, kd, kh, kw, [&](Index oi, Index ii) { row[oi] = in_ch[ii]; });
        }
  }
  return col;
}

template <typename Scalar>
void col2im(const Geometry& g, const RowMat<Scalar>& col, Scalar* dx) {
  for (Index c = 0; c < g.in_ch; ++c) {
    Scalar* dx_ch = dx + c * g.in_voxels();
    for (Index kd = 0; kd < 3; ++kd)
      for (Index kh = 0; kh < 3; ++kh)
        for (Index kw = 0; kw < 3; ++kw) {
          const Scalar* row = col.row(c * kTaps + (kd * 3 + kh) * 3 + kw).data();
          for_each_tap_pair(g, kd, kh, kw, [&](Index oi, Index ii) { dx_ch[ii] += row[oi]; });
        }
  }
}

}  // namespace

void set_conv_algorithm(ConvAlgorithm algorithm) { t_algorithm = algorithm; }
ConvAlgorithm conv_algorithm() { return t_algorithm; }

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride) {
  const Geometry g = conv_geometry(input.shape(), weight.shape(), bias.shape(), stride);
  const Index out_vox = g.out_voxels();
  Buffer<Scalar> out(g.out_ch * out_vox);
  const bool direct = use_direct<Scalar>();
  if (direct) {
    for (Index o = 0; o < g.out_ch; ++o) out.segment(o * out_vox, out_vox).setConstant(bias.value()[o]);
    direct_forward(g, input.value().data(), weight.value().data(), out.data());
  } else {
    const RowMat<Scalar> col = im2col(g, input.value().data());
    RowMap<Scalar> om(out.data(), g.out_ch, out_vox);
    om.noalias() = ConstRowMap<Scalar>(weight.value().data(), g.out_ch, g.in_ch * kTaps) * col;
    om.colwise() += bias.value().matrix();
  }
  return Tensor<Scalar>::record("conv3d", Shape{g.out_ch, g.od, g.oh, g.ow}, std::move(out),
      {input, weight, bias},
      [g, direct, input, weight](const Buffer<Scalar>& grad, const std::vector<Buffer<Scalar>*>& gi) {
        const Index out_vox = g.out_voxels();
        ConstRowMap<Scalar> gm(grad.data(), g.out_ch, out_vox);
        if (gi[2]) *gi[2] += gm.rowwise().sum().array();
        if (!gi[0] && !gi[1]) return;
        if (direct) {
          direct_backward(g, input.value().data(), weight.value().data(), grad.data(),
                          gi[0] ? gi[0]->data() : nullptr, gi[1] ? gi[1]->data() : nullptr);
          return;
        }
        const Index k = g.in_ch * kTaps;
        ConstRowMap<Scalar> wm(weight.value().data(), g.out_ch, k);
        if (gi[1]) {
          const RowMat<Scalar> col = im2col(g, input.value().data());
          RowMap<Scalar>(gi[1]->data(), g.out_ch, k).noalias() += gm * col.transpose();
        }
        if (gi[0]) {
          RowMat<Scalar> dcol(k, out_vox);
          dcol.noalias() = wm.transpose() * gm;
          col2im(g, dcol, gi[0]->data());
        }
      });
}

template <typename Scalar>
Tensor<Scalar> conv_transpose3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias) {
  const Shape& in = input.shape();
  if (in.size() != 4) throw ShapeError("conv_transpose3d: input must be C x D x H x W, got " + to_string(in));
  if (weight.rank() != 5 || weight.dim(2) != 2 || weight.dim(3) != 2 || weight.dim(4) != 2) {
    throw ShapeError("conv_transpose3d: weight must be Ci x Co x 2 x 2 x 2, got " + to_string(weight.shape()));
  }
  if (weight.dim(0) != in[0]) {
    throw ShapeError("conv_transpose3d: weight expects " + std::to_string(weight.dim(0)) +
                     " input channels, input " + to_string(in) + " has " + std::to_string(in[0]));
  }
  const Index ci = in[0], co = weight.dim(1);
  if (bias.shape() != Shape{co}) throw ShapeError("conv_transpose3d: bias must be [" + std::to_string(co) + "]");
  const Index d = in[1], h = in[2], w = in[3];
  const Index od = 2 * d, oh = 2 * h, ow = 2 * w;
  const Index in_vox = d * h * w, out_vox = od * oh * ow;

  // out[o, 2z+kd, 2y+kh, 2x+kw] = bias[o] + sum_c in[c, z, y, x] * weight[c, o, kd, kh, kw]
  auto visit = [=](auto&& fn) {
    for (Index c = 0; c < ci; ++c)
      for (Index o = 0; o < co; ++o)
        for (Index kd = 0; kd < 2; ++kd)
          for (Index kh = 0; kh < 2; ++kh)
            for (Index kw = 0; kw < 2; ++kw) {
              const Index tap = ((c * co + o) * 2 + kd) * 4 + kh * 2 + kw;
              for (Index z = 0; z < d; ++z)
                for (Index y = 0; y < h; ++y) {
                  const Index in_row = c * in_vox + (z * h + y) * w;
                  const Index out_row = o * out_vox + ((2 * z + kd) * oh + 2 * y + kh) * ow + kw;
                  for (Index x = 0; x < w; ++x) fn(tap, out_row + 2 * x, in_row + x);
                }
            }
  };

  Buffer<Scalar> out(co * out_vox);
  for (Index o = 0; o < co; ++o) out.segment(o * out_vox, out_vox).setConstant(bias.value()[o]);
  {
    const Scalar* xv = input.value().data();
    const Scalar* wv = weight.value().data();
    Scalar* ov = out.data();
    visit([&](Index tap, Index oi, Index ii) { ov[oi] += wv[tap] * xv[ii]; });
  }
  return Tensor<Scalar>::record("conv_transpose3d", Shape{co, od, oh, ow}, std::move(out),
      {input, weight, bias},
      [visit, input, weight, co, out_vox](const Buffer<Scalar>& grad, const std::vector<Buffer<Scalar>*>& gi) {
        if (gi[2]) {
          for (Index o = 0; o < co; ++o) (*gi[2])[o] += grad.segment(o * out_vox, out_vox).sum();
        }
        const Scalar* xv = input.value().data();
        const Scalar* wv = weight.value().data();
        Scalar* dx = gi[0] ? gi[0]->data() : nullptr;
        Scalar* dw = gi[1] ? gi[1]->data() : nullptr;
        if (!dx && !dw) return;
        visit([&](Index tap, Index oi, Index ii) {
          if (dx) dx[ii] += wv[tap] * grad[oi];
          if (dw) dw[tap] += xv[ii] * grad[oi];
        });
      });
}

template <typename Scalar>
Tensor<Scalar> pointwise_conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias) {
  if (input.rank() != 4 || weight.rank() != 2 || weight.dim(1) != input.dim(0) ||
      bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("pointwise_conv3d: input " + to_string(input.shape()) + ", weight " +
                     to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
  }
  const Index ci = input.dim(0), co = weight.dim(0);
  const Index vox = input.numel() / ci;
  Buffer<Scalar> out(co * vox);
  RowMap<Scalar> om(out.data(), co, vox);
  om.noalias() = ConstRowMap<Scalar>(weight.value().data(), co, ci) *
                 ConstRowMap<Scalar>(input.value().data(), ci, vox);
  om.colwise() += bias.value().matrix();
  Shape shape = input.shape();
  shape[0] = co;
  return Tensor<Scalar>::record("pointwise_conv3d", std::move(shape), std::move(out), {input, weight, bias},
      [input, weight, ci, co, vox](const Buffer<Scalar>& grad, const std::vector<Buffer<Scalar>*>& gi) {
        ConstRowMap<Scalar> gm(grad.data(), co, vox);
        if (gi[0]) {
          RowMap<Scalar>(gi[0]->data(), ci, vox).noalias() +=
              ConstRowMap<Scalar>(weight.value().data(), co, ci).transpose() * gm;
        }
        if (gi[1]) {
          RowMap<Scalar>(gi[1]->data(), co, ci).noalias() +=
              gm * ConstRowMap<Scalar>(input.value().data(), ci, vox).transpose();
        }
        if (gi[2]) *gi[2] += gm.rowwise().sum().array();
      });
}

#define LONSEG_INSTANTIATE_CONV(S)                                                               \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int);          \
  template Tensor<S> conv_transpose3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);     \
  template Tensor<S> pointwise_conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

LONSEG_INSTANTIATE_CONV(float)
LONSEG_INSTANTIATE_CONV(double)

}  // namespace lonseg
