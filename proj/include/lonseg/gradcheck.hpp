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

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "lonseg/tensor.hpp"

namespace lonseg {

struct GradcheckEntry {
  std::string component;
  double max_abs_error = 0;
  double max_rel_error = 0;  // max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-8)
  double tolerance = 0;
  Index checked = 0;  // gradient entries compared
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  std::vector<std::string> failures() const;
};

void write_report(std::ostream& out, const GradcheckReport& report);

/// In single precision the analytic gradients come from the 32-bit engine and
/// the reference from 64-bit central differences of the same function, since
/// 32-bit differences are dominated by rounding.
struct GradcheckOptions {
  std::uint64_t seed = 0;
  bool single_precision = false;
  double step = 1e-5;
  double tolerance = 0;  // 0: 1e-5 in double, 1e-3 in single precision
  Index max_entries_per_input = 64;
};

template <typename Scalar>
using GradFn = std::function<Tensor<Scalar>(const std::vector<Tensor<Scalar>>&)>;

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences. Every input is a leaf; inputs larger than `max_entries` are
/// checked on a random subset of entries drawn from `rng`.
template <typename Scalar>
GradcheckEntry check_gradients(const std::string& component, const GradFn<Scalar>& f,
                               const std::vector<Tensor<Scalar>>& inputs, double step, double tolerance,
                               Index max_entries, std::mt19937_64& rng);

/// Analytic gradients of `f` against central differences of `reference`,
/// evaluated in double on the same inputs.
template <typename Scalar>
GradcheckEntry check_gradients_against(const std::string& component, const GradFn<Scalar>& f,
                                       const GradFn<double>& reference, const std::vector<Tensor<double>>& inputs,
                                       double step, double tolerance, Index max_entries, std::mt19937_64& rng);

/// Every primitive, the conv block, the attention block, the three losses
/// and 2-stage end-to-end networks.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace lonseg
