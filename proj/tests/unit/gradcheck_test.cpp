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
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "lonseg/gradcheck.hpp"
#include "lonseg/ops.hpp"
#include "test_util.hpp"

namespace lonseg {
namespace {

// Squares its input but reports a backward pass of x instead of 2x.
TensorD broken_square(const TensorD& x) {
  Buffer<double> value = x.value().square();
  const Buffer<double> saved = x.value();
  return TensorD::record("broken_square", x.shape(), std::move(value), {x},
                         [saved](const Buffer<double>& g, const std::vector<Buffer<double>*>& in) {
                           if (in[0]) *in[0] += g * saved;
                         });
}

std::string report_text(const GradcheckReport& r) {
  std::ostringstream out;
  write_report(out, r);
  return out.str();
}

TEST(Gradcheck, FullSuitePassesInDouble) {
  const auto report = run_gradcheck();
  EXPECT_TRUE(report.passed()) << report_text(report);
  EXPECT_GE(report.entries.size(), 30u);
  for (const auto& e : report.entries) {
    EXPECT_LT(e.max_rel_error, 1e-5) << e.component;
    EXPECT_GT(e.checked, 0) << e.component;
  }
}

TEST(Gradcheck, FullSuitePassesInSingle) {
  GradcheckOptions o;
  o.single_precision = true;
  const auto report = run_gradcheck(o);
  EXPECT_TRUE(report.passed()) << report_text(report);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-3) << e.component;
}

TEST(Gradcheck, CoversEveryRequiredComponent) {
  const auto report = run_gradcheck();
  std::set<std::string> names;
  for (const auto& e : report.entries) names.insert(e.component);
  for (const char* required : {"conv3d", "conv_transpose3d", "instance_norm3d", "conv_block", "tpa_block",
                               "dice_loss", "cross_entropy_loss", "bcr_loss", "network_e2e"}) {
    EXPECT_TRUE(names.count(required)) << required;
  }
}

TEST(Gradcheck, ReportIsDeterministic) {
  GradcheckOptions o;
  o.seed = 5;
  EXPECT_EQ(report_text(run_gradcheck(o)), report_text(run_gradcheck(o)));
}

TEST(Gradcheck, CorruptedBackwardIsNamed) {
  std::mt19937_64 rng(1);
  auto x = testing::random_tensor({4, 3}, rng, true);
  GradFn<double> f = [](const std::vector<TensorD>& in) { return sum(broken_square(in[0])); };
  const auto entry = check_gradients<double>("broken_square", f, {x}, 1e-5, 1e-5, 64, rng);
  EXPECT_FALSE(entry.passed);
  EXPECT_GT(entry.max_rel_error, 0.1);
  GradcheckReport report{{entry}};
  EXPECT_FALSE(report.passed());
  ASSERT_EQ(report.failures().size(), 1u);
  EXPECT_NE(report.failures()[0].find("broken_square"), std::string::npos);

  GradFn<double> good = [](const std::vector<TensorD>& in) { return sum(square(in[0])); };
  EXPECT_TRUE(check_gradients<double>("square", good, {x}, 1e-5, 1e-5, 64, rng).passed);
}

}  // namespace
}  // namespace lonseg
