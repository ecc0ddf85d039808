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

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lonseg/tensor.hpp"

namespace lonseg {

using Extents3 = std::array<Index, 3>;   // D, H, W
using Spacing3 = std::array<double, 3>;  // z, y, x

/// Binary 3D mask in C order.
struct BinaryMask {
  Extents3 extents{0, 0, 0};
  std::vector<std::uint8_t> voxels;

  BinaryMask() = default;
  explicit BinaryMask(Extents3 e) : extents(e), voxels(std::size_t(e[0] * e[1] * e[2]), 0) {}

  Index size() const { return Index(voxels.size()); }
  Index count() const;
  bool empty() const { return count() == 0; }
  std::uint8_t& at(Index z, Index y, Index x) { return voxels[std::size_t((z * extents[1] + y) * extents[2] + x)]; }
  std::uint8_t at(Index z, Index y, Index x) const {
    return voxels[std::size_t((z * extents[1] + y) * extents[2] + x)];
  }
  bool operator==(const BinaryMask&) const = default;
};

struct ConfusionCounts {
  Index tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// 2 TP / (2 TP + FP + FN); 1.0 when both masks are empty.
double dice_score(const BinaryMask& pred, const BinaryMask& gt);

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
};

/// Empty denominators give 1.0 when the counterpart mask is also empty, else 0.0.
PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground voxels with a 6-connected background neighbour or on the volume border.
BinaryMask surface(const BinaryMask& mask);

enum class Hd95Mode {
  pooled,               // percentile over the union of both directed distance sets
  max_of_directed,      // max of the two directed 95th percentiles
};

/// 95th percentile surface distance in physical units. Empty optional when
/// either mask is empty.
std::optional<double> hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing3& spacing,
                           Hd95Mode mode = Hd95Mode::pooled);

/// Linear-interpolation percentile: sorted values v, position q/100 * (n - 1),
/// interpolated between the neighbouring order statistics. q in [0, 100].
double percentile(std::vector<double> values, double q);

struct WilcoxonResult {
  double statistic = 0;  // min(W+, W-)
  double w_plus = 0;
  double p_value = 1;
  int n = 0;             // non-zero differences
  bool exact = false;
};

/// Two-sided signed-rank test on paired differences. Zero differences are
/// dropped; ties get average ranks. Exact null distribution for n <= 12,
/// normal approximation with tie correction otherwise.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);

struct MetricsRecord {
  std::string case_id;
  double dice = 0;
  std::optional<double> hd95;
  double precision = 0;
  double recall = 0;
};

MetricsRecord evaluate_case(const std::string& case_id, const BinaryMask& pred, const BinaryMask& gt,
                            const Spacing3& spacing, Hd95Mode mode = Hd95Mode::pooled);

struct MetricsSummary {
  double mean_dice = 0, median_dice = 0;
  std::optional<double> mean_hd95, median_hd95;
  double mean_precision = 0, median_precision = 0;
  double mean_recall = 0, median_recall = 0;
  int cases = 0;
  int hd95_cases = 0;  // cases with a defined HD-95
};

MetricsSummary summarize(const std::vector<MetricsRecord>& records);

/// `case,dice,hd95,precision,recall` rows sorted by case id, then `mean` and
/// `median` rows. Undefined HD-95 values are written as `nan`.
void write_metrics_csv(std::ostream& out, std::vector<MetricsRecord> records);

}  // namespace lonseg
