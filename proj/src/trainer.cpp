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
#include "lonseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lonseg/ops.hpp"

namespace lonseg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::string reduction_name(BcrReduction r) { return r == BcrReduction::sum_squared ? "sum_squared" : "mean_squared"; }

BcrReduction parse_reduction(const std::string& text) {
  if (text == "sum_squared") return BcrReduction::sum_squared;
  if (text == "mean_squared") return BcrReduction::mean_squared;
  throw ConfigError("unknown BCR reduction '" + text + "'");
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const Volume& v) {
  Buffer<Scalar> values(Index(v.data.size()));
  for (Index i = 0; i < values.size(); ++i) values[i] = Scalar(v.data[i]);
  return Tensor<Scalar>(v.shape, std::move(values));
}

template <typename Scalar>
Tensor<Scalar> mask_tensor(const BinaryMask& m) {
  Buffer<Scalar> values(m.size());
  for (Index i = 0; i < values.size(); ++i) values[i] = Scalar(m.voxels[i]);
  return Tensor<Scalar>({m.extents[0], m.extents[1], m.extents[2]}, std::move(values));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  return Tensor<To>(t.shape(), t.value().template cast<To>().eval());
}

// Reverses the flagged spatial axes of the trailing D x H x W block.
template <typename Scalar>
Tensor<Scalar> flip(const Tensor<Scalar>& t, const std::array<bool, 3>& axes) {
  const auto& s = t.shape();
  const std::size_t r = s.size();
  const Index d = s[r - 3], h = s[r - 2], w = s[r - 1];
  const Index lead = t.numel() / (d * h * w);
  Buffer<Scalar> out(t.numel());
  const auto& in = t.value();
  for (Index c = 0; c < lead; ++c)
    for (Index z = 0; z < d; ++z)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index sz = axes[0] ? d - 1 - z : z, sy = axes[1] ? h - 1 - y : y, sx = axes[2] ? w - 1 - x : x;
          out[((c * d + z) * h + y) * w + x] = in[((c * d + sz) * h + sy) * w + sx];
        }
  return Tensor<Scalar>(s, std::move(out));
}

template <typename Scalar>
class Sgd {
 public:
  Sgd(const OptimizerConfig& config, std::vector<NamedTensor<Scalar>> params)
      : config_(config), params_(std::move(params)) {
    for (const auto& [name, t] : params_) momentum_.push_back(Buffer<Scalar>::Zero(t.numel()));
  }

  // Returns the pre-clipping global gradient norm.
  double step(double lr) {
    double norm2 = 0;
    for (const auto& [name, t] : params_) {
      if (t.has_grad()) norm2 += t.grad().template cast<double>().square().sum();
    }
    const double norm = std::sqrt(norm2);
    const double scale = (config_.grad_clip > 0 && norm > config_.grad_clip) ? config_.grad_clip / (norm + 1e-6) : 1.0;
    const Scalar mu = Scalar(config_.momentum), wd = Scalar(config_.weight_decay), rate = Scalar(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto t = params_[i].second;
      auto& w = t.data();
      Buffer<Scalar> g = t.has_grad() ? Buffer<Scalar>(t.grad() * Scalar(scale)) : Buffer<Scalar>::Zero(w.size());
      g += wd * w;
      auto& buf = momentum_[i];
      buf = mu * buf + g;
      if (config_.nesterov) w -= rate * (g + mu * buf);
      else w -= rate * buf;
    }
    return norm;
  }

  std::vector<NamedTensor<Scalar>> momentum_tensors() const {
    std::vector<NamedTensor<Scalar>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back(params_[i].first, Tensor<Scalar>(params_[i].second.shape(), momentum_[i]));
    }
    return out;
  }

 private:
  OptimizerConfig config_;
  std::vector<NamedTensor<Scalar>> params_;
  std::vector<Buffer<Scalar>> momentum_;
};

template <typename Scalar>
std::vector<LoadedCase<Scalar>> load_split(const TrainConfig& config, const std::vector<ManifestEntry>& all,
                                           const std::string& split) {
  std::vector<LoadedCase<Scalar>> out;
  for (const auto& e : select_split(all, split, config.fold)) out.push_back(load_case<Scalar>(config.manifest, e));
  return out;
}

template <typename Scalar>
double mean_val_dice(const std::vector<LoadedCase<Scalar>>& cases, const NetworkParams<Scalar>& params,
                     const NetworkConfig& network) {
  if (cases.empty()) return 0.0;
  NoGradGuard guard;
  Model<Scalar> model;
  model.config.network = network;
  model.params = params;
  double total = 0;
  for (const auto& c : cases) total += dice_score(predict_mask(model, c.x_t, c.x_prev), c.mask);
  return total / double(cases.size());
}

template <typename Scalar>
Checkpoint snapshot(const TrainConfig& config, const NetworkParams<Scalar>& params, const Sgd<Scalar>& sgd,
                    int epoch, const std::mt19937_64& rng, double best, int best_epoch) {
  Checkpoint c;
  c.dtype = std::is_same_v<Scalar, float> ? "f32" : "f64";
  c.config_json = to_json(config);
  c.parameters = capture(params.named_parameters());
  c.momentum = capture(sgd.momentum_tensors());
  c.epoch = epoch;
  std::ostringstream state;
  state << rng;
  c.rng_state = state.str();
  c.best_val_dice = best;
  c.best_epoch = best_epoch;
  return c;
}

template <typename Scalar>
TrainResult train_impl(TrainConfig config) {
  const auto manifest = read_manifest(config.manifest);
  auto train_cases = load_split<Scalar>(config, manifest, config.train_split);
  auto val_cases = load_split<Scalar>(config, manifest, config.val_split);
  if (train_cases.empty()) throw ConfigError("no cases in split '" + config.train_split + "' of " + config.manifest);
  {
    std::set<std::string> train_ids;
    for (const auto& c : train_cases) train_ids.insert(c.entry.patient_id);
    for (const auto& c : val_cases) {
      if (train_ids.count(c.entry.patient_id)) {
        throw ConfigError("patient " + c.entry.patient_id + " appears in both training and validation splits");
      }
    }
  }
  const auto& shape = train_cases.front().x_t.shape();
  config.network.input_channels = shape[0];
  config.network.extents = {shape[1], shape[2], shape[3]};
  config.network.validate();
  for (const auto* group : {&train_cases, &val_cases}) {
    for (const auto& c : *group) {
      if (c.x_t.shape() != shape || c.x_prev.shape() != shape) {
        throw ShapeError("case " + c.entry.case_id + " has shape " + to_string(c.x_t.shape()) + ", expected " +
                         to_string(shape));
      }
    }
  }

  const auto lambdas = config.effective_lambdas();
  auto params = init_network<Scalar>(config.network, config.seed);
  Sgd<Scalar> sgd(config.optimizer, params.named_parameters());
  std::mt19937_64 rng(config.seed ^ 0x7a11ULL);
  const bool attention = uses_attention(config.network.variant);
  const int levels = config.network.stages();

  std::optional<fs::path> out_dir;
  if (!config.out_dir.empty()) {
    out_dir = config.out_dir;
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
    std::ofstream cfg(*out_dir / "config.json");
    cfg << to_json(config) << '\n';
    if (!cfg) throw IoError("cannot write " + (*out_dir / "config.json").string());
  }

  TrainResult result;
  std::vector<std::size_t> order(train_cases.size());
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution coin(0.5);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.optimizer.learning_rate(epoch, config.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.loss.bcr_per_level.assign(levels, 0.0);
    entry.attention.assign(attention ? levels : 0, {0.0, 0.0});

    const int batches = int((order.size() + config.batch_size - 1) / config.batch_size);
    for (int b = 0; b < batches; ++b) {
      const std::size_t begin = std::size_t(b) * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const Scalar scale = Scalar(1.0 / double(end - begin));
      params.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& c = train_cases[order[i]];
        auto x_t = c.x_t, x_prev = c.x_prev, target = c.target;
        if (config.flips) {
          const std::array<bool, 3> axes{coin(rng), coin(rng), coin(rng)};
          x_t = flip(x_t, axes);
          x_prev = flip(x_prev, axes);
          target = flip(target, axes);
        }
        LossResult<Scalar> loss;
        ForwardResult<Scalar> fwd;
        try {
          fwd = forward(x_t, x_prev, params, config.network);
          loss = total_loss(fwd.logits, target, fwd.features, c.entry.birads_t, c.entry.birads_prev, lambdas,
                            config.bcr);
        } catch (const NonFiniteError& e) {
          throw NonFiniteError("non-finite values at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b) + " (case " + c.entry.case_id + "): " + e.what());
        }
        if (!std::isfinite(loss.breakdown.total)) {
          throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                               " (case " + c.entry.case_id + "); reduce the learning rate");
        }
        (loss.total * scale).backward();
        entry.loss.dice += loss.breakdown.dice;
        entry.loss.ce += loss.breakdown.ce;
        entry.loss.bcr += loss.breakdown.bcr;
        entry.loss.total += loss.breakdown.total;
        for (std::size_t m = 0; m < loss.breakdown.bcr_per_level.size(); ++m) {
          entry.loss.bcr_per_level[m] += loss.breakdown.bcr_per_level[m];
        }
        for (std::size_t m = 0; m < fwd.weights.size(); ++m) {
          entry.attention[m].first += fwd.weights[m].w1();
          entry.attention[m].second += fwd.weights[m].w2();
        }
      }
      sgd.step(lr);
    }

    const double n = double(order.size());
    entry.loss.dice /= n;
    entry.loss.ce /= n;
    entry.loss.bcr /= n;
    entry.loss.total /= n;
    for (auto& v : entry.loss.bcr_per_level) v /= n;
    for (auto& [w1, w2] : entry.attention) {
      w1 /= n;
      w2 /= n;
    }

    const bool last = epoch + 1 == config.epochs;
    if (!val_cases.empty() && (last || (epoch + 1) % config.val_every == 0)) {
      entry.val_dice = mean_val_dice(val_cases, params, config.network);
      if (*entry.val_dice > result.best_val_dice) {
        result.best_val_dice = *entry.val_dice;
        result.best_epoch = epoch;
        if (out_dir) {
          save_checkpoint(*out_dir / "checkpoint_best.lck",
                          snapshot(config, params, sgd, epoch + 1, rng, result.best_val_dice, result.best_epoch));
        }
      }
    }
    result.log.push_back(std::move(entry));
  }

  result.final_checkpoint =
      snapshot(config, params, sgd, config.epochs, rng, result.best_val_dice, result.best_epoch);
  if (out_dir) {
    save_checkpoint(*out_dir / "checkpoint_final.lck", result.final_checkpoint);
    std::ofstream loss_csv(*out_dir / "loss_log.csv");
    write_loss_log(loss_csv, result.log);
    if (attention) {
      std::ofstream att_csv(*out_dir / "attention_log.csv");
      write_attention_log(att_csv, result.log);
    }
    if (!loss_csv) throw IoError("cannot write " + (*out_dir / "loss_log.csv").string());
  }
  return result;
}

void write_pgm(const fs::path& path, Index h, Index w, const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> normalized_slice(const Volume& v, Index z) {
  const Index h = v.shape[2], w = v.shape[3];
  const auto* base = v.data.data() + z * h * w;
  const auto [lo, hi] = std::minmax_element(base, base + h * w);
  const double range = double(*hi) - double(*lo);
  std::vector<std::uint8_t> out(std::size_t(h * w));
  for (Index i = 0; i < h * w; ++i) {
    const double t = range > 0 ? (double(base[i]) - double(*lo)) / range : 0.0;
    out[i] = std::uint8_t(std::lround(255.0 * t));
  }
  return out;
}

std::vector<std::uint8_t> mask_slice(const BinaryMask& m, Index z) {
  const Index h = m.extents[1], w = m.extents[2];
  std::vector<std::uint8_t> out(std::size_t(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out[y * w + x] = m.at(z, y, x) ? 255 : 0;
  return out;
}

template <typename Scalar>
std::vector<double> pooled_bottleneck(const Tensor<Scalar>& x, const NetworkParams<Scalar>& params) {
  const auto pooled = global_avg_pool(encode(x, params).back());
  std::vector<double> out(std::size_t(pooled.numel()));
  for (Index i = 0; i < pooled.numel(); ++i) out[i] = double(pooled.value()[i]);
  return out;
}

}  // namespace

double OptimizerConfig::learning_rate(int epoch, int epochs) const {
  return lr * std::pow(1.0 - double(epoch) / double(epochs), poly_power);
}

void TrainConfig::validate() const {
  network.validate();
  lambdas.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (val_every < 1) throw ConfigError("val_every must be at least 1");
  if (dtype != "f32" && dtype != "f64") throw ConfigError("dtype must be f32 or f64");
  if (!(bcr.eps > 0)) throw ConfigError("bcr eps must be positive");
  if (!bcr.layer_weights.empty() && int(bcr.layer_weights.size()) != network.stages()) {
    throw ConfigError("bcr layer_weights needs one entry per stage");
  }
  if (!(optimizer.lr > 0) || optimizer.momentum < 0 || optimizer.momentum >= 1 || optimizer.weight_decay < 0) {
    throw ConfigError("optimizer needs lr > 0, momentum in [0, 1) and weight_decay >= 0");
  }
}

LossWeights TrainConfig::effective_lambdas() const {
  LossWeights w = lambdas;
  if (network.variant == Variant::no_bcr) w.bcr = 0.0;
  return w;
}

std::string to_json(const TrainConfig& c) {
  const json j{
      {"network",
       {{"channels", c.network.channels},
        {"input_channels", c.network.input_channels},
        {"extents", c.network.extents},
        {"conv_per_stage", c.network.conv_per_stage},
        {"negative_slope", c.network.negative_slope}}},
      {"variant", to_string(c.network.variant)},
      {"lambda_dice", c.lambdas.dice},
      {"lambda_ce", c.lambdas.ce},
      {"lambda_bcr", c.lambdas.bcr},
      {"bcr", {{"eps", c.bcr.eps}, {"layer_weights", c.bcr.layer_weights}, {"reduction", reduction_name(c.bcr.reduction)}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"momentum", c.optimizer.momentum},
        {"nesterov", c.optimizer.nesterov},
        {"weight_decay", c.optimizer.weight_decay},
        {"poly_power", c.optimizer.poly_power},
        {"grad_clip", c.optimizer.grad_clip}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"dtype", c.dtype},
      {"manifest", c.manifest},
      {"out_dir", c.out_dir},
      {"train_split", c.train_split},
      {"val_split", c.val_split},
      {"fold", c.fold},
      {"flips", c.flips},
      {"val_every", c.val_every}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    reject_unknown(j,
                   {"network", "variant", "lambda_dice", "lambda_ce", "lambda_bcr", "bcr", "optimizer", "batch_size",
                    "epochs", "seed", "dtype", "manifest", "out_dir", "train_split", "val_split", "fold", "flips",
                    "val_every"},
                   "training config");
    if (j.contains("network")) {
      const auto& n = j.at("network");
      reject_unknown(n, {"channels", "input_channels", "extents", "conv_per_stage", "negative_slope"}, "network");
      read_key(n, "channels", c.network.channels);
      read_key(n, "input_channels", c.network.input_channels);
      read_key(n, "extents", c.network.extents);
      read_key(n, "conv_per_stage", c.network.conv_per_stage);
      read_key(n, "negative_slope", c.network.negative_slope);
    }
    if (j.contains("variant")) c.network.variant = parse_variant(j.at("variant").get<std::string>());
    read_key(j, "lambda_dice", c.lambdas.dice);
    read_key(j, "lambda_ce", c.lambdas.ce);
    read_key(j, "lambda_bcr", c.lambdas.bcr);
    if (j.contains("bcr")) {
      const auto& b = j.at("bcr");
      reject_unknown(b, {"eps", "layer_weights", "reduction"}, "bcr");
      read_key(b, "eps", c.bcr.eps);
      read_key(b, "layer_weights", c.bcr.layer_weights);
      if (b.contains("reduction")) c.bcr.reduction = parse_reduction(b.at("reduction").get<std::string>());
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"lr", "momentum", "nesterov", "weight_decay", "poly_power", "grad_clip"}, "optimizer");
      read_key(o, "lr", c.optimizer.lr);
      read_key(o, "momentum", c.optimizer.momentum);
      read_key(o, "nesterov", c.optimizer.nesterov);
      read_key(o, "weight_decay", c.optimizer.weight_decay);
      read_key(o, "poly_power", c.optimizer.poly_power);
      read_key(o, "grad_clip", c.optimizer.grad_clip);
    }
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "epochs", c.epochs);
    read_key(j, "seed", c.seed);
    read_key(j, "dtype", c.dtype);
    read_key(j, "manifest", c.manifest);
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "train_split", c.train_split);
    read_key(j, "val_split", c.val_split);
    read_key(j, "fold", c.fold);
    read_key(j, "flips", c.flips);
    read_key(j, "val_every", c.val_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return c;
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  if (config.manifest.empty()) throw ConfigError("training needs a manifest");
  return config.dtype == "f64" ? train_impl<double>(config) : train_impl<float>(config);
}

void write_loss_log(std::ostream& out, const std::vector<EpochLog>& log) {
  const std::size_t levels = log.empty() ? 0 : log.front().loss.bcr_per_level.size();
  out << "epoch,lr,dice,ce,bcr";
  for (std::size_t m = 0; m < levels; ++m) out << ",bcr_" << m;
  out << ",total,val_dice\n";
  const auto old = out.precision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.loss.dice << ',' << e.loss.ce << ',' << e.loss.bcr;
    for (double v : e.loss.bcr_per_level) out << ',' << v;
    out << ',' << e.loss.total << ',';
    if (e.val_dice) out << *e.val_dice;
    out << '\n';
  }
  out.precision(old);
}

void write_attention_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,level,w1,w2\n";
  const auto old = out.precision(17);
  for (const auto& e : log) {
    for (std::size_t m = 0; m < e.attention.size(); ++m) {
      out << e.epoch << ',' << m << ',' << e.attention[m].first << ',' << e.attention[m].second << '\n';
    }
  }
  out.precision(old);
}

template <typename Scalar>
LoadedCase<Scalar> load_case(const fs::path& manifest, const ManifestEntry& entry) {
  const auto dir = manifest.parent_path();
  LoadedCase<Scalar> c;
  c.entry = entry;
  const auto x_t = read_volume(dir / entry.current);
  const auto x_prev = read_volume(dir / entry.prior);
  c.mask = read_mask(dir / entry.mask, &c.spacing);
  if (x_t.shape != x_prev.shape || x_t.extents() != c.mask.extents) {
    throw IoError("case " + entry.case_id + ": current " + to_string(x_t.shape) + ", prior " +
                  to_string(x_prev.shape) + " and mask extents disagree");
  }
  c.x_t = to_tensor<Scalar>(x_t);
  c.x_prev = to_tensor<Scalar>(x_prev);
  c.target = mask_tensor<Scalar>(c.mask);
  return c;
}

template <typename Scalar>
Model<Scalar> model_from_checkpoint(const Checkpoint& checkpoint) {
  Model<Scalar> model;
  model.config = train_config_from_json(checkpoint.config_json);
  model.params = init_network<Scalar>(model.config.network, model.config.seed);
  restore(model.params.named_parameters(), checkpoint.parameters);
  return model;
}

template <typename Scalar>
Model<Scalar> load_model(const fs::path& checkpoint) {
  return model_from_checkpoint<Scalar>(load_checkpoint(checkpoint));
}

template <typename Scalar>
BinaryMask argmax_mask(const Tensor<Scalar>& logits) {
  if (logits.rank() != 4 || logits.dim(0) != 2) throw ShapeError("logits must be 2 x D x H x W");
  BinaryMask mask({logits.dim(1), logits.dim(2), logits.dim(3)});
  const Index n = mask.size();
  const auto& v = logits.value();
  for (Index i = 0; i < n; ++i) mask.voxels[i] = v[n + i] > v[i] ? 1 : 0;
  return mask;
}

template <typename Scalar>
BinaryMask predict_mask(const Model<Scalar>& model, const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev) {
  NoGradGuard guard;
  return argmax_mask(forward(x_t, x_prev, model.params, model.config.network).logits);
}

std::vector<MetricsRecord> evaluate_cases(const fs::path& manifest, const std::vector<ManifestEntry>& entries,
                                          const Predictor& predict, Hd95Mode mode) {
  std::vector<MetricsRecord> records;
  for (const auto& e : entries) {
    const auto c = load_case<float>(manifest, e);
    records.push_back(evaluate_case(e.case_id, predict(c), c.mask, c.spacing, mode));
  }
  std::sort(records.begin(), records.end(),
            [](const MetricsRecord& a, const MetricsRecord& b) { return a.case_id < b.case_id; });
  return records;
}

std::vector<MetricsRecord> evaluate(const fs::path& checkpoint, const fs::path& manifest, const std::string& split,
                                    const fs::path& csv, const std::string& fold, Hd95Mode mode) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto entries = select_split(read_manifest(manifest), split, fold);
  if (entries.empty()) throw ConfigError("no cases in split '" + split + "' of " + manifest.string());
  std::vector<MetricsRecord> records;
  if (ckpt.dtype == "f64") {
    const auto model = model_from_checkpoint<double>(ckpt);
    records = evaluate_cases(manifest, entries, [&](const LoadedCase<float>& c) {
      return predict_mask(model, cast<double>(c.x_t), cast<double>(c.x_prev));
    }, mode);
  } else {
    const auto model = model_from_checkpoint<float>(ckpt);
    records = evaluate_cases(manifest, entries, [&](const LoadedCase<float>& c) {
      return predict_mask(model, c.x_t, c.x_prev);
    }, mode);
  }
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw IoError("cannot open " + csv.string() + " for writing");
    write_metrics_csv(out, records);
    if (!out) throw IoError("write failed for " + csv.string());
  }
  return records;
}

template <typename Scalar>
double bottleneck_distance(const Tensor<Scalar>& x_t, const Tensor<Scalar>& x_prev,
                           const NetworkParams<Scalar>& params) {
  NoGradGuard guard;
  const auto a = pooled_bottleneck(x_t, params);
  const auto b = pooled_bottleneck(x_prev, params);
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d2);
}

std::vector<EmbeddingRecord> embed_analysis(const fs::path& checkpoint, const fs::path& manifest,
                                            const std::string& split) {
  const auto ckpt = load_checkpoint(checkpoint);
  auto entries = read_manifest(manifest);
  if (!split.empty()) entries = select_split(entries, split);
  std::vector<EmbeddingRecord> out;
  const bool f64 = ckpt.dtype == "f64";
  std::optional<Model<float>> mf;
  std::optional<Model<double>> md;
  if (f64) md = model_from_checkpoint<double>(ckpt);
  else mf = model_from_checkpoint<float>(ckpt);
  for (const auto& e : entries) {
    const auto c = load_case<float>(manifest, e);
    const double d = f64 ? bottleneck_distance(cast<double>(c.x_t), cast<double>(c.x_prev), md->params)
                         : bottleneck_distance(c.x_t, c.x_prev, mf->params);
    out.push_back({e.case_id, e.birads_prev, e.birads_t, d});
  }
  std::sort(out.begin(), out.end(),
            [](const EmbeddingRecord& a, const EmbeddingRecord& b) { return a.case_id < b.case_id; });
  return out;
}

void write_embedding_csv(std::ostream& out, const std::vector<EmbeddingRecord>& records) {
  const auto old = out.precision(10);
  out << "case,birads_prev,birads_t,distance\n";
  for (const auto& r : records) out << r.case_id << ',' << r.birads_prev << ',' << r.birads_t << ',' << r.distance << '\n';
  out.precision(old);
}

std::vector<fs::path> export_slices(const fs::path& checkpoint, const fs::path& manifest, const std::string& case_id,
                                    const fs::path& out_dir) {
  const auto entries = read_manifest(manifest);
  const auto it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.case_id == case_id; });
  if (it == entries.end()) throw ConfigError("case '" + case_id + "' not in " + manifest.string());
  const auto dir = manifest.parent_path();
  const auto x_t = read_volume(dir / it->current);
  const auto x_prev = read_volume(dir / it->prior);
  const auto c = load_case<float>(manifest, *it);
  const auto ckpt = load_checkpoint(checkpoint);
  BinaryMask pred;
  if (ckpt.dtype == "f64") {
    pred = predict_mask(model_from_checkpoint<double>(ckpt), cast<double>(c.x_t), cast<double>(c.x_prev));
  } else {
    pred = predict_mask(model_from_checkpoint<float>(ckpt), c.x_t, c.x_prev);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const Index z = c.mask.extents[0] / 2, h = c.mask.extents[1], w = c.mask.extents[2];
  const std::vector<std::pair<std::string, std::vector<std::uint8_t>>> images{
      {case_id + "_current.pgm", normalized_slice(x_t, z)},
      {case_id + "_prior.pgm", normalized_slice(x_prev, z)},
      {case_id + "_gt.pgm", mask_slice(c.mask, z)},
      {case_id + "_pred.pgm", mask_slice(pred, z)}};
  std::vector<fs::path> written;
  for (const auto& [name, pixels] : images) {
    write_pgm(out_dir / name, h, w, pixels);
    written.push_back(out_dir / name);
  }
  return written;
}

#define LONSEG_INSTANTIATE_TRAINER(S)                                                                     \
  template LoadedCase<S> load_case(const fs::path&, const ManifestEntry&);                                \
  template Model<S> model_from_checkpoint(const Checkpoint&);                                             \
  template Model<S> load_model(const fs::path&);                                                          \
  template BinaryMask argmax_mask(const Tensor<S>&);                                                      \
  template BinaryMask predict_mask(const Model<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template double bottleneck_distance(const Tensor<S>&, const Tensor<S>&, const NetworkParams<S>&);

LONSEG_INSTANTIATE_TRAINER(float)
LONSEG_INSTANTIATE_TRAINER(double)

}  // namespace lonseg
