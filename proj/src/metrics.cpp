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
#include "lonseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace lonseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_extents(const BinaryMask& a, const BinaryMask& b) {
  if (a.extents != b.extents) {
    throw ShapeError("mask extents differ: " + to_string(Shape(a.extents.begin(), a.extents.end())) + " vs " +
                     to_string(Shape(b.extents.begin(), b.extents.end())));
  }
}

// Exact 1D squared distance transform (lower envelope of parabolas) over
// samples at physical positions i * step. Entries of `f` may be +inf.
void distance_transform_1d(std::vector<double>& f, double step, std::vector<Index>& v, std::vector<double>& z) {
  const Index n = Index(f.size());
  v.assign(n, 0);
  z.assign(n + 1, 0);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + (q * step) * (q * step);
    while (k >= 0) {
      const Index p = v[k];
      const double s = (fq - (f[p] + (p * step) * (p * step))) / (2.0 * step * double(q - p));
      if (s <= z[k]) {
        --k;
      } else {
        v[++k] = q;
        z[k] = s;
        z[k + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) return;  // no sites on this line
  std::vector<double> out(n);
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[j + 1] < q * step) ++j;
    const double d = double(q - v[j]) * step;
    out[q] = d * d + f[v[j]];
  }
  f.swap(out);
}

// Squared physical distance from every voxel to the nearest site.
std::vector<double> squared_distance_to(const BinaryMask& sites, const Spacing3& spacing) {
  const auto [nd, nh, nw] = sites.extents;
  std::vector<double> dist(sites.voxels.size());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = sites.voxels[i] ? 0.0 : kInf;
  std::vector<double> line;
  std::vector<Index> v;
  std::vector<double> z;
  auto pass = [&](Index len, Index stride, double step, auto&& origins) {
    line.resize(len);
    origins([&](Index base) {
      for (Index i = 0; i < len; ++i) line[i] = dist[base + i * stride];
      distance_transform_1d(line, step, v, z);
      for (Index i = 0; i < len; ++i) dist[base + i * stride] = line[i];
    });
  };
  pass(nd, nh * nw, spacing[0], [&](auto&& fn) {
    for (Index y = 0; y < nh; ++y)
      for (Index x = 0; x < nw; ++x) fn(y * nw + x);
  });
  pass(nh, nw, spacing[1], [&](auto&& fn) {
    for (Index zz = 0; zz < nd; ++zz)
      for (Index x = 0; x < nw; ++x) fn(zz * nh * nw + x);
  });
  pass(nw, 1, spacing[2], [&](auto&& fn) {
    for (Index zz = 0; zz < nd; ++zz)
      for (Index y = 0; y < nh; ++y) fn((zz * nh + y) * nw);
  });
  return dist;
}

std::vector<double> directed_distances(const BinaryMask& from_surface, const std::vector<double>& sq_dist) {
  std::vector<double> out;
  for (std::size_t i = 0; i < from_surface.voxels.size(); ++i) {
    if (from_surface.voxels[i]) out.push_back(std::sqrt(sq_dist[i]));
  }
  return out;
}

double median_of(std::vector<double> values) { return percentile(std::move(values), 50.0); }

}  // namespace

Index BinaryMask::count() const {
  return Index(std::count_if(voxels.begin(), voxels.end(), [](std::uint8_t v) { return v != 0; }));
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_extents(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool p = pred.voxels[i] != 0, g = gt.voxels[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  const Index denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  PrecisionRecall pr;
  if (c.tp + c.fp == 0) pr.precision = (c.fn == 0) ? 1.0 : 0.0;
  else pr.precision = double(c.tp) / double(c.tp + c.fp);
  if (c.tp + c.fn == 0) pr.recall = (c.fp == 0) ? 1.0 : 0.0;
  else pr.recall = double(c.tp) / double(c.tp + c.fn);
  return pr;
}

BinaryMask surface(const BinaryMask& mask) {
  const auto [nd, nh, nw] = mask.extents;
  BinaryMask out(mask.extents);
  for (Index z = 0; z < nd; ++z)
    for (Index y = 0; y < nh; ++y)
      for (Index x = 0; x < nw; ++x) {
        if (!mask.at(z, y, x)) continue;
        const bool border = z == 0 || y == 0 || x == 0 || z == nd - 1 || y == nh - 1 || x == nw - 1;
        const bool exposed = border || !mask.at(z - 1, y, x) || !mask.at(z + 1, y, x) || !mask.at(z, y - 1, x) ||
                             !mask.at(z, y + 1, x) || !mask.at(z, y, x - 1) || !mask.at(z, y, x + 1);
        if (exposed) out.at(z, y, x) = 1;
      }
  return out;
}

std::optional<double> hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing3& spacing, Hd95Mode mode) {
  require_same_extents(pred, gt);
  if (pred.empty() || gt.empty()) return std::nullopt;
  const auto pred_surface = surface(pred);
  const auto gt_surface = surface(gt);
  auto forward = directed_distances(pred_surface, squared_distance_to(gt_surface, spacing));
  auto backward = directed_distances(gt_surface, squared_distance_to(pred_surface, spacing));
  if (mode == Hd95Mode::max_of_directed) {
    return std::max(percentile(std::move(forward), 95.0), percentile(std::move(backward), 95.0));
  }
  forward.insert(forward.end(), backward.begin(), backward.end());
  return percentile(std::move(forward), 95.0);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty list");
  if (q < 0 || q > 100) throw std::invalid_argument("percentile q must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> d;
  for (double x : differences) {
    if (!std::isfinite(x)) throw std::invalid_argument("Wilcoxon: non-finite difference");
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw std::invalid_argument("Wilcoxon: all differences are zero");
  const int n = int(d.size());
  if (n < 5) throw std::invalid_argument("Wilcoxon needs at least 5 non-zero differences, got " + std::to_string(n));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  // Twice the average rank, so tied ranks stay integral.
  std::vector<int> rank2(n);
  double tie_term = 0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const int t = j - i + 1;
    for (int k = i; k <= j; ++k) rank2[order[k]] = (i + 1) + (j + 1);
    tie_term += double(t) * t * t - t;
    i = j + 1;
  }

  int w_plus2 = 0, total2 = 0;
  for (int i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) w_plus2 += rank2[i];
  }
  WilcoxonResult result;
  result.n = n;
  result.w_plus = w_plus2 / 2.0;
  result.statistic = std::min(w_plus2, total2 - w_plus2) / 2.0;

  if (n <= 12) {
    // Null distribution of 2 W+ by subset-sum counting over the doubled ranks.
    std::vector<double> counts(total2 + 1, 0.0);
    counts[0] = 1.0;
    for (int i = 0; i < n; ++i) {
      for (int s = total2; s >= rank2[i]; --s) counts[s] += counts[s - rank2[i]];
    }
    double lower = 0, upper = 0;
    for (int s = 0; s <= total2; ++s) {
      if (s <= w_plus2) lower += counts[s];
      if (s >= w_plus2) upper += counts[s];
    }
    const double total = std::ldexp(1.0, n);
    result.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    result.exact = true;
  } else {
    const double nn = n;
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = (result.w_plus - mean) / std::sqrt(var);
    result.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  }
  return result;
}

MetricsRecord evaluate_case(const std::string& case_id, const BinaryMask& pred, const BinaryMask& gt,
                            const Spacing3& spacing, Hd95Mode mode) {
  MetricsRecord r;
  r.case_id = case_id;
  r.dice = dice_score(pred, gt);
  r.hd95 = hd95(pred, gt, spacing, mode);
  const auto pr = precision_recall(pred, gt);
  r.precision = pr.precision;
  r.recall = pr.recall;
  return r;
}

MetricsSummary summarize(const std::vector<MetricsRecord>& records) {
  MetricsSummary s;
  s.cases = int(records.size());
  if (records.empty()) return s;
  std::vector<double> dice, hd, prec, rec;
  for (const auto& r : records) {
    dice.push_back(r.dice);
    prec.push_back(r.precision);
    rec.push_back(r.recall);
    if (r.hd95) hd.push_back(*r.hd95);
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  s.mean_dice = mean(dice);
  s.median_dice = median_of(dice);
  s.mean_precision = mean(prec);
  s.median_precision = median_of(prec);
  s.mean_recall = mean(rec);
  s.median_recall = median_of(rec);
  s.hd95_cases = int(hd.size());
  if (!hd.empty()) {
    s.mean_hd95 = mean(hd);
    s.median_hd95 = median_of(hd);
  }
  return s;
}

void write_metrics_csv(std::ostream& out, std::vector<MetricsRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const MetricsRecord& a, const MetricsRecord& b) { return a.case_id < b.case_id; });
  const auto old_precision = out.precision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
    else out << "nan";
  };
  out << "case,dice,hd95,precision,recall\n";
  for (const auto& r : records) {
    out << r.case_id << ',' << r.dice << ',';
    opt(r.hd95);
    out << ',' << r.precision << ',' << r.recall << '\n';
  }
  const auto s = summarize(records);
  out << "mean," << s.mean_dice << ',';
  opt(s.mean_hd95);
  out << ',' << s.mean_precision << ',' << s.mean_recall << '\n';
  out << "median," << s.median_dice << ',';
  opt(s.median_hd95);
  out << ',' << s.median_precision << ',' << s.median_recall << '\n';
  out.precision(old_precision);
}

}  // namespace lonseg
