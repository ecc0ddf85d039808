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

// Brute-force reference implementations used only by the tests. Nothing here
// calls into the library; inputs and outputs are plain vectors in C order.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// 3x3x3, padding 1. x [ci, d, h, w], w [co, ci, 3, 3, 3], b [co].
/// Each output is b[o] followed by the taps added in (c, kd, kh, kw) order.
Vec conv3d(const Vec& x, int ci, int d, int h, int w, const Vec& weight, int co, const Vec& bias, int stride);

/// 2x2x2 stride-2 transposed convolution. x [ci, d, h, w], w [ci, co, 2, 2, 2].
Vec conv_transpose3d(const Vec& x, int ci, int d, int h, int w, const Vec& weight, int co, const Vec& bias);

/// Central differences of f at x, one coordinate at a time.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5);

/// All-pairs 95th percentile surface distance; pooled over both directions.
/// Masks are D x H x W bytes. Returns -1 when either mask is empty.
double hd95(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int d, int h, int w,
            const std::array<double, 3>& spacing);

/// Sort, then interpolate between neighbouring order statistics at q/100 * (n - 1).
double percentile(Vec values, double q);

struct Wilcoxon {
  double w_plus;
  double p_two_sided;
};

/// Exact test by enumerating all 2^n sign assignments of the ranked
/// non-zero differences.
Wilcoxon wilcoxon_enumerate(const Vec& diffs);

/// k_t * InstNorm(w1 * k_t - w2 * k_prev) + k_t, features [c, n] with n voxels per channel.
Vec modulation(const Vec& k_t, const Vec& k_prev, int channels, double w1, double w2, double eps);

/// tanh(sum (k_t - k_prev)^2) / (|bt - bp| + eps); `mean` divides the sum by the element count.
double bcr_level(const Vec& k_t, const Vec& k_prev, int bt, int bp, double eps, bool mean = false);

/// Weighted sum of bcr_level over levels.
double bcr_total(const std::vector<Vec>& k_t, const std::vector<Vec>& k_prev, const Vec& weights, int bt, int bp,
                 double eps);

}  // namespace oracle
