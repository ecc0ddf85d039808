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
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace oracle {

Vec conv3d(const Vec& x, int ci, int d, int h, int w, const Vec& weight, int co, const Vec& bias, int stride) {
  const int od = (d - 1) / stride + 1, oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  Vec out(std::size_t(co) * od * oh * ow);
  for (int o = 0; o < co; ++o)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[o];
          for (int c = 0; c < ci; ++c)
            for (int kd = 0; kd < 3; ++kd)
              for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw) {
                  const int iz = z * stride + kd - 1, iy = y * stride + kh - 1, ix = xx * stride + kw - 1;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= w) continue;
                  const double wv = weight[(((std::size_t(o) * ci + c) * 3 + kd) * 3 + kh) * 3 + kw];
                  const double xv = x[((std::size_t(c) * d + iz) * h + iy) * w + ix];
                  acc += wv * xv;
                }
          out[((std::size_t(o) * od + z) * oh + y) * ow + xx] = acc;
        }
  return out;
}

Vec conv_transpose3d(const Vec& x, int ci, int d, int h, int w, const Vec& weight, int co, const Vec& bias) {
  const int od = 2 * d, oh = 2 * h, ow = 2 * w;
  Vec out(std::size_t(co) * od * oh * ow);
  for (int o = 0; o < co; ++o)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = bias[o];
          for (int c = 0; c < ci; ++c) {
            const double wv = weight[(((std::size_t(c) * co + o) * 2 + z % 2) * 2 + y % 2) * 2 + xx % 2];
            acc += x[((std::size_t(c) * d + z / 2) * h + y / 2) * w + xx / 2] * wv;
          }
          out[((std::size_t(o) * od + z) * oh + y) * ow + xx] = acc;
        }
  return out;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x, double h) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    if (!std::isfinite(up) || !std::isfinite(down)) std::abort();
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

namespace {

std::vector<std::array<int, 3>> boundary(const std::vector<std::uint8_t>& m, int d, int h, int w) {
  auto inside = [&](int z, int y, int x) {
    return z >= 0 && y >= 0 && x >= 0 && z < d && y < h && x < w && m[(std::size_t(z) * h + y) * w + x];
  };
  std::vector<std::array<int, 3>> pts;
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!inside(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z == d - 1 || y == h - 1 || x == w - 1;
        if (edge || !inside(z - 1, y, x) || !inside(z + 1, y, x) || !inside(z, y - 1, x) || !inside(z, y + 1, x) ||
            !inside(z, y, x - 1) || !inside(z, y, x + 1)) {
          pts.push_back({z, y, x});
        }
      }
  return pts;
}

Vec nearest(const std::vector<std::array<int, 3>>& from, const std::vector<std::array<int, 3>>& to,
            const std::array<double, 3>& s) {
  Vec out;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dz = (p[0] - q[0]) * s[0], dy = (p[1] - q[1]) * s[1], dx = (p[2] - q[2]) * s[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

Vec signed_ranks(const Vec& nonzero) {
  const std::size_t n = nonzero.size();
  Vec ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(nonzero[j]) < std::abs(nonzero[i])) less += 1;
      else if (std::abs(nonzero[j]) == std::abs(nonzero[i])) equal += 1;
    }
    ranks[i] = less + (equal + 1) / 2;
  }
  return ranks;
}

}  // namespace

double hd95(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int d, int h, int w,
            const std::array<double, 3>& spacing) {
  const auto sa = boundary(a, d, h, w), sb = boundary(b, d, h, w);
  if (sa.empty() || sb.empty()) return -1;
  Vec all = nearest(sa, sb, spacing);
  const Vec back = nearest(sb, sa, spacing);
  all.insert(all.end(), back.begin(), back.end());
  return percentile(all, 95);
}

double percentile(Vec values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q / 100 * double(values.size() - 1);
  const std::size_t lo = std::size_t(pos);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (pos - double(lo)) * (values[lo + 1] - values[lo]);
}

Wilcoxon wilcoxon_enumerate(const Vec& diffs) {
  Vec nz;
  for (double v : diffs) {
    if (v != 0) nz.push_back(v);
  }
  const Vec r = signed_ranks(nz);
  const std::size_t n = nz.size();
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (nz[i] > 0) observed += r[i];
  }
  double low = 0, high = 0;
  const std::uint64_t total = std::uint64_t(1) << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double wp = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) wp += r[i];
    }
    if (wp <= observed + 1e-9) low += 1;
    if (wp >= observed - 1e-9) high += 1;
  }
  return {observed, std::min(1.0, 2 * std::min(low, high) / double(total))};
}

Vec modulation(const Vec& k_t, const Vec& k_prev, int channels, double w1, double w2, double eps) {
  const std::size_t n = k_t.size() / channels;
  Vec out(k_t.size());
  for (int c = 0; c < channels; ++c) {
    Vec r(n);
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = w1 * k_t[c * n + i] - w2 * k_prev[c * n + i];
      mean += r[i];
    }
    mean /= double(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (r[i] - mean) * (r[i] - mean);
    var /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double kt = k_t[c * n + i];
      out[c * n + i] = kt * ((r[i] - mean) / std::sqrt(var + eps)) + kt;
    }
  }
  return out;
}

double bcr_level(const Vec& k_t, const Vec& k_prev, int bt, int bp, double eps, bool mean) {
  double d = 0;
  for (std::size_t i = 0; i < k_t.size(); ++i) d += (k_t[i] - k_prev[i]) * (k_t[i] - k_prev[i]);
  if (mean) d /= double(k_t.size());
  return std::tanh(d) / (std::abs(bt - bp) + eps);
}

double bcr_total(const std::vector<Vec>& k_t, const std::vector<Vec>& k_prev, const Vec& weights, int bt, int bp,
                 double eps) {
  double total = 0;
  for (std::size_t m = 0; m < k_t.size(); ++m) total += weights[m] * bcr_level(k_t[m], k_prev[m], bt, bp, eps);
  return total;
}

}  // namespace oracle
