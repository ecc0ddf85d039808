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
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "lonseg/checkpoint.hpp"
#include "lonseg/ops.hpp"
#include "lonseg/synthdata.hpp"
#include "lonseg/trainer.hpp"
#include "test_util.hpp"

namespace lonseg {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lonseg_trainer_test";
    fs::remove_all(root_);
    DatasetSpec spec;
    spec.phantom.extents = {8, 16, 16};
    spec.phantom.radius_min = 2;
    spec.phantom.radius_max = 3;
    spec.cases = 4;
    spec.train_fraction = 0.5;
    spec.val_fraction = 0.5;
    spec.seed = 21;
    manifest_ = generate_dataset(spec, root_ / "data").manifest;
  }

  static TrainConfig config(const std::string& out, int epochs = 1) {
    TrainConfig c;
    c.network.channels = {4, 8, 16};
    c.manifest = manifest_.string();
    c.out_dir = out.empty() ? std::string() : (root_ / out).string();
    c.epochs = epochs;
    c.val_every = 1;
    return c;
  }

  static std::string loss_log(const TrainResult& r) {
    std::ostringstream out;
    write_loss_log(out, r.log);
    return out.str();
  }

  static inline fs::path root_;
  static inline fs::path manifest_;
};

TEST_F(TrainerTest, OneEpochWritesLoadableCheckpoint) {
  const auto result = train(config("one"));
  for (const char* f : {"config.json", "loss_log.csv", "attention_log.csv", "checkpoint_final.lck"}) {
    EXPECT_TRUE(fs::exists(root_ / "one" / f)) << f;
  }
  const auto loaded = load_checkpoint(root_ / "one" / "checkpoint_final.lck");
  EXPECT_EQ(checkpoint_digest(loaded), checkpoint_digest(result.final_checkpoint));
  EXPECT_EQ(loaded.epoch, 1);
  EXPECT_EQ(loaded.parameters.size(), result.final_checkpoint.parameters.size());
  const auto model = load_model<float>(root_ / "one" / "checkpoint_final.lck");
  EXPECT_EQ(model.params.parameter_count(), parameter_count(model.config.network));
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_TRUE(result.log[0].val_dice.has_value());
  EXPECT_EQ(result.log[0].attention.size(), 3u);
}

TEST_F(TrainerTest, CheckpointRoundTripGivesIdenticalForward) {
  for (const std::string dtype : {"f32", "f64"}) {
    auto cfg = config("round_" + dtype);
    cfg.dtype = dtype;
    const auto result = train(cfg);
    const auto path = root_ / ("round_" + dtype) / "copy.lck";
    save_checkpoint(path, result.final_checkpoint);
    std::mt19937_64 rng(3);
    auto x_t = testing::random_tensor<float>({1, 8, 16, 16}, rng);
    auto x_prev = testing::random_tensor<float>({1, 8, 16, 16}, rng);
    if (dtype == "f32") {
      const auto a = model_from_checkpoint<float>(result.final_checkpoint);
      const auto b = load_model<float>(path);
      NoGradGuard g;
      const auto la = forward(x_t, x_prev, a.params, a.config.network).logits;
      const auto lb = forward(x_t, x_prev, b.params, b.config.network).logits;
      EXPECT_TRUE((la.value() == lb.value()).all());
    } else {
      const auto a = model_from_checkpoint<double>(result.final_checkpoint);
      const auto b = load_model<double>(path);
      auto dt = TensorD(x_t.shape(), x_t.value().cast<double>());
      auto dp = TensorD(x_prev.shape(), x_prev.value().cast<double>());
      NoGradGuard g;
      EXPECT_TRUE((forward(dt, dp, a.params, a.config.network).logits.value() ==
                   forward(dt, dp, b.params, b.config.network).logits.value())
                      .all());
    }
    EXPECT_EQ(slurp(path), slurp(root_ / ("round_" + dtype) / "checkpoint_final.lck"));
  }
}

TEST_F(TrainerTest, SameSeedSameDigest) {
  const auto a = train(config("seed_a", 2));
  const auto b = train(config("seed_b", 2));
  EXPECT_EQ(checkpoint_digest(a.final_checkpoint), checkpoint_digest(b.final_checkpoint));
  EXPECT_EQ(loss_log(a), loss_log(b));
  auto other = config("", 2);
  other.seed = 2;
  EXPECT_NE(checkpoint_digest(train(other).final_checkpoint), checkpoint_digest(a.final_checkpoint));
}

TEST_F(TrainerTest, NoBcrVariantEqualsZeroLambda) {
  auto a = config("", 2);
  a.network.variant = Variant::no_bcr;
  auto b = config("", 2);
  b.lambdas.bcr = 0;
  EXPECT_EQ(a.effective_lambdas().bcr, 0.0);
  EXPECT_EQ(loss_log(train(a)), loss_log(train(b)));
}

TEST_F(TrainerTest, LossFallsOverShortRun) {
  auto cfg = config("", 6);
  const auto r = train(cfg);
  EXPECT_LT(r.log.back().loss.total, r.log.front().loss.total);
}

TEST_F(TrainerTest, NoTpaAndSingleVariantsTrain) {
  for (auto v : {Variant::no_tpa, Variant::single}) {
    auto cfg = config("", 1);
    cfg.network.variant = v;
    const auto r = train(cfg);
    EXPECT_TRUE(r.log[0].attention.empty()) << to_string(v);
    if (v == Variant::single) {
      EXPECT_EQ(r.log[0].loss.bcr, 0.0);
    }
  }
}

TEST_F(TrainerTest, EvaluationIsDeterministic) {
  train(config("eval"));
  const auto ckpt = root_ / "eval" / "checkpoint_final.lck";
  const auto a = root_ / "eval" / "a.csv", b = root_ / "eval" / "b.csv";
  const auto records = evaluate(ckpt, manifest_, "val", a);
  evaluate(ckpt, manifest_, "val", b);
  EXPECT_EQ(records.size(), 2u);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(slurp(a).substr(0, 31), "case,dice,hd95,precision,recall");
}

TEST_F(TrainerTest, GroundTruthPredictorScoresOne) {
  const auto entries = select_split(read_manifest(manifest_), "train");
  const auto records = evaluate_cases(manifest_, entries, [](const LoadedCase<float>& c) { return c.mask; });
  ASSERT_EQ(records.size(), entries.size());
  for (const auto& r : records) {
    EXPECT_EQ(r.dice, 1.0);
    EXPECT_EQ(*r.hd95, 0.0);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
  }
}

TEST_F(TrainerTest, EmbeddingDistances) {
  train(config("embed"));
  const auto ckpt = root_ / "embed" / "checkpoint_final.lck";
  const auto records = embed_analysis(ckpt, manifest_);
  EXPECT_EQ(records.size(), 4u);
  for (const auto& r : records) EXPECT_GE(r.distance, 0.0);
  const auto model = load_model<float>(ckpt);
  const auto c = load_case<float>(manifest_, read_manifest(manifest_).front());
  EXPECT_EQ(bottleneck_distance(c.x_t, c.x_t, model.params), 0.0);
  std::ostringstream out;
  write_embedding_csv(out, records);
  EXPECT_EQ(out.str().substr(0, 34), "case,birads_prev,birads_t,distance");
}

TEST_F(TrainerTest, ExportSlicesWritesImages) {
  train(config("slices"));
  const auto id = read_manifest(manifest_).front().case_id;
  const auto files = export_slices(root_ / "slices" / "checkpoint_final.lck", manifest_, id, root_ / "slices" / "png");
  EXPECT_EQ(files.size(), 4u);
  for (const auto& f : files) EXPECT_EQ(slurp(f).substr(0, 2), "P5");
}

TEST_F(TrainerTest, NonFiniteInputNamesBatch) {
  const auto dir = root_ / "nan";
  fs::create_directories(dir / "cases");
  auto entries = read_manifest(manifest_);
  for (auto& e : entries) {
    for (auto* rel : {&e.current, &e.prior, &e.mask}) fs::copy_file(root_ / "data" / *rel, dir / *rel);
  }
  write_manifest(dir / "manifest.jsonl", entries);
  const auto victim = select_split(entries, "train").back();
  auto v = read_volume(dir / victim.current);
  v.data[17] = std::numeric_limits<float>::quiet_NaN();
  write_volume(dir / victim.current, v);
  auto cfg = config("");
  cfg.manifest = (dir / "manifest.jsonl").string();
  try {
    train(cfg);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("batch"), std::string::npos) << what;
    EXPECT_NE(what.find(victim.case_id), std::string::npos) << what;
  }
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.network.variant = Variant::no_tpa;
  c.network.channels = {4, 8};
  c.lambdas = {0.5, 2.0, 0.25};
  c.bcr.reduction = BcrReduction::mean_squared;
  c.bcr.layer_weights = {0.2, 1.0};
  c.optimizer.lr = 3e-3;
  c.epochs = 7;
  c.seed = 99;
  c.dtype = "f64";
  c.fold = "1/5";
  c.flips = true;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.network.variant, Variant::no_tpa);
  EXPECT_EQ(back.bcr.layer_weights, c.bcr.layer_weights);
  EXPECT_EQ(back.optimizer.lr, 3e-3);
}

TEST(TrainConfig, PartialJsonKeepsBase) {
  TrainConfig base;
  base.epochs = 12;
  const auto c = train_config_from_json(R"({"lambda_bcr": 0.0, "variant": "single"})", base);
  EXPECT_EQ(c.epochs, 12);
  EXPECT_EQ(c.lambdas.bcr, 0.0);
  EXPECT_EQ(c.network.variant, Variant::single);
}

TEST(TrainConfig, RejectsInvalid) {
  EXPECT_THROW(train_config_from_json(R"({"epochz": 3})"), ConfigError);
  EXPECT_THROW(train_config_from_json(R"({"batch_size": 0})").validate(), ConfigError);
  EXPECT_THROW(train_config_from_json(R"({"lambda_ce": -1})").validate(), ConfigError);
  EXPECT_THROW(train_config_from_json("[1, 2]"), ConfigError);
  TrainConfig c;
  c.dtype = "f16";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Optimizer, PolyDecay) {
  OptimizerConfig o;
  EXPECT_EQ(o.learning_rate(0, 10), 1e-2);
  EXPECT_NEAR(o.learning_rate(5, 10), 1e-2 * std::pow(0.5, 0.9), 1e-15);
  EXPECT_GE(o.learning_rate(9, 10), 0.0);
}

}  // namespace
}  // namespace lonseg
