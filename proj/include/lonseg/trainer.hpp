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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lonseg/checkpoint.hpp"
#include "lonseg/losses.hpp"
#include "lonseg/metrics.hpp"
#include "lonseg/network.hpp"
#include "lonseg/volume_io.hpp"

namespace lonseg {

/// SGD with Nesterov momentum, L2 weight decay, global-norm gradient clipping
/// and polynomial learning-rate decay lr * (1 - epoch / epochs)^power.
struct OptimizerConfig {
  double lr = 1e-2;
  double momentum = 0.99;
  bool nesterov = true;
  double weight_decay = 3e-5;
  double poly_power = 0.9;
  double grad_clip = 12.0;  // <= 0 disables clipping

  double learning_rate(int epoch, int epochs) const;
};

struct TrainConfig {
  NetworkConfig network;
  LossWeights lambdas;
  BcrConfig bcr;
  OptimizerConfig optimizer;
  int batch_size = 2;
  int epochs = 200;
  std::uint64_t seed = 1;
  std::string dtype = "f32";  // "f64" trains in double precision
  std::string manifest;
  std::string out_dir;
  std::string train_split = "train";
  std::string val_split = "val";
  std::string fold;    // "k/N" or empty
  bool flips = false;  // random flips along each spatial axis
  int val_every = 10;  // validation cadence in epochs; the last epoch is always validated

  /// Throws ConfigError.
  void validate() const;
  /// Loss weights actually used: lambda_bcr is forced to 0 for the no-bcr variant.
  LossWeights effective_lambdas() const;
};

std::string to_json(const TrainConfig& config);
/// Keys absent from `text` keep their values from `base`. Unknown keys throw.
TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base = {});

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  LossBreakdown loss;  // mean over the epoch's training cases
  std::optional<double> val_dice;
  std::vector<std::pair<double, double>> attention;  // mean (w1, w2) per level
};

struct TrainResult {
  Checkpoint final_checkpoint;
  std::vector<EpochLog> log;
  double best_val_dice = -1;
  int best_epoch = -1;
};

/// Writes config.json, loss_log.csv, attention_log.csv (attention variants),
/// checkpoint_best.lck and checkpoint_final.lck when `out_dir` is set.
/// Throws NonFiniteError naming the epoch and batch on divergence.
TrainResult train(const TrainConfig& config);

void write_loss_log(std::ostream& out, const std::vector<EpochLog>& log);
void write_attention_log(std::ostream& out, const std::vector<EpochLog>& log);

template <typename Scalar>
struct LoadedCase {
  ManifestEntry entry;
  Tensor<Scalar> x_t;     // [C, D, H, W]
  Tensor<Scalar> x_prev;  // [C, D, H, W]
  Tensor<Scalar> target;  // [D, H, W], {0, 1}
  BinaryMask mask;
  Spacing3 spacing{1, 1, 1};
};

/// Paths in the entries are resolved against the manifest's directory.
template <typename Scalar>
LoadedCase<Scalar> load_case(const std::filesystem::path& manifest, const ManifestEntry& entry);

template <typename Scalar>
struct Model {
  TrainConfig config;
  NetworkParams<Scalar> params;
};

template <typename Scalar>
Model<Scalar> model_from_checkpoint(const Checkpoint& checkpoint);

template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& checkpoint);

/// Foreground wherever logit 1 exceeds logit 0.
template <typename Scalar>
BinaryMask argmax_mask(const Tensor<Scalar>& logits);

template <typename Scalar>
BinaryMask predict_mask(const Model<Scalar>& model, const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev);

using Predictor = std::function<BinaryMask(const LoadedCase<float>&)>;

std::vector<MetricsRecord> evaluate_cases(const std::filesystem::path& manifest,
                                          const std::vector<ManifestEntry>& entries, const Predictor& predict,
                                          Hd95Mode mode = Hd95Mode::pooled);

/// Runs the checkpoint on `split` and, when `csv` is non-empty, writes the
/// metrics CSV there.
std::vector<MetricsRecord> evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                    const std::string& split, const std::filesystem::path& csv = {},
                                    const std::string& fold = "", Hd95Mode mode = Hd95Mode::pooled);

struct EmbeddingRecord {
  std::string case_id;
  int birads_prev = 0;
  int birads_t = 0;
  double distance = 0;
};

/// Euclidean distance between the pooled bottleneck features of both scans.
template <typename Scalar>
double bottleneck_distance(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                           const NetworkParams<Scalar>& params);

/// `split` empty selects every case.
std::vector<EmbeddingRecord> embed_analysis(const std::filesystem::path& checkpoint,
                                            const std::filesystem::path& manifest, const std::string& split = "");
void write_embedding_csv(std::ostream& out, const std::vector<EmbeddingRecord>& records);

/// Middle axial slice of the current scan, prior scan, ground truth and
/// prediction as binary PGM files in `out_dir`. Returns the written paths.
std::vector<std::filesystem::path> export_slices(const std::filesystem::path& checkpoint,
                                                 const std::filesystem::path& manifest, const std::string& case_id,
                                                 const std::filesystem::path& out_dir);

}  // namespace lonseg
