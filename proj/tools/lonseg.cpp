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
// Command-line front end: gen, train, eval, embed, gradcheck, export-slices.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lonseg/gradcheck.hpp"
#include "lonseg/synthdata.hpp"
#include "lonseg/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace lonseg;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kVerification = 3, kIo = 4 };

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct GenArgs {
  std::string spec, out;
  std::optional<int> n;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string config, data, out, variant, fold;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, val_every;
  std::optional<double> lr, lambda_dice, lambda_ce, lambda_bcr, bcr_eps;
  std::optional<std::string> dtype;
  bool flips = false;
};

struct EvalArgs {
  std::string ckpt, data, split = "test", out, fold;
  bool max_of_directed = false;
};

struct EmbedArgs {
  std::string ckpt, data, out, split;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool single = false;
};

struct ExportArgs {
  std::string ckpt, data, case_id, out;
};

int run_gen(const GenArgs& a) {
  DatasetSpec spec = a.spec.empty() ? DatasetSpec{} : dataset_spec_from_json(read_text(a.spec));
  if (a.n) spec.cases = *a.n;
  if (a.seed) spec.seed = spec.phantom.seed = *a.seed;
  spec.validate();
  const auto summary = generate_dataset(spec, a.out);
  std::cout << "wrote " << summary.entries.size() << " cases to " << summary.manifest.string() << "\n"
            << "digest " << summary.digest << "\n";
  return kOk;
}

int run_train(const TrainArgs& a) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : train_config_from_json(read_text(a.config));
  if (!a.data.empty()) config.manifest = a.data;
  if (!a.out.empty()) config.out_dir = a.out;
  if (!a.variant.empty()) config.network.variant = parse_variant(a.variant);
  if (!a.fold.empty()) config.fold = a.fold;
  if (a.seed) config.seed = *a.seed;
  if (a.epochs) config.epochs = *a.epochs;
  if (a.batch_size) config.batch_size = *a.batch_size;
  if (a.val_every) config.val_every = *a.val_every;
  if (a.lr) config.optimizer.lr = *a.lr;
  if (a.lambda_dice) config.lambdas.dice = *a.lambda_dice;
  if (a.lambda_ce) config.lambdas.ce = *a.lambda_ce;
  if (a.lambda_bcr) config.lambdas.bcr = *a.lambda_bcr;
  if (a.bcr_eps) config.bcr.eps = *a.bcr_eps;
  if (a.dtype) config.dtype = *a.dtype;
  if (a.flips) config.flips = true;
  if (config.out_dir.empty()) throw ConfigError("train needs --out");

  const auto start = std::chrono::steady_clock::now();
  const auto result = train(config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& last = result.log.back();
  std::cout << "epochs " << result.log.size() << "  final loss " << last.loss.total;
  if (last.val_dice) std::cout << "  val dice " << *last.val_dice;
  std::cout << "  best val dice " << result.best_val_dice << " (epoch " << result.best_epoch << ")\n"
            << "checkpoint digest " << checkpoint_digest(result.final_checkpoint) << "\n"
            << "time " << seconds << " s\n";
  return kOk;
}

int run_eval(const EvalArgs& a) {
  const auto mode = a.max_of_directed ? Hd95Mode::max_of_directed : Hd95Mode::pooled;
  const auto records = evaluate(a.ckpt, a.data, a.split, a.out, a.fold, mode);
  const auto s = summarize(records);
  std::cout << "cases " << s.cases << "  mean dice " << s.mean_dice;
  if (s.mean_hd95) std::cout << "  mean hd95 " << *s.mean_hd95;
  std::cout << "  (hd95 defined for " << s.hd95_cases << " of " << s.cases << " cases)\n";
  return kOk;
}

int run_embed(const EmbedArgs& a) {
  const auto records = embed_analysis(a.ckpt, a.data, a.split);
  std::ofstream out(a.out);
  if (!out) throw IoError("cannot open " + a.out + " for writing");
  write_embedding_csv(out, records);
  std::cout << "wrote " << records.size() << " rows to " << a.out << "\n";
  return kOk;
}

int run_gradcheck_cmd(const GradcheckArgs& a) {
  GradcheckOptions options;
  options.seed = a.seed;
  options.single_precision = a.single;
  const auto report = run_gradcheck(options);
  write_report(std::cout, report);
  return report.passed() ? kOk : kVerification;
}

int run_export(const ExportArgs& a) {
  for (const auto& path : export_slices(a.ckpt, a.data, a.case_id, a.out)) std::cout << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal lesion segmentation with temporal prior attention"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic longitudinal dataset");
  gen_cmd->add_option("--spec", gen.spec, "Dataset spec JSON");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of cases (overrides spec 'cases')");
  gen_cmd->add_option("--seed", gen.seed, "Seed (overrides spec 'seed')");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Training config JSON");
  train_cmd->add_option("--data", tr.data, "Manifest (config 'manifest')");
  train_cmd->add_option("--out", tr.out, "Output directory (config 'out_dir')");
  train_cmd->add_option("--variant", tr.variant, "full | no-tpa | no-bcr | single");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
  train_cmd->add_option("--val-every", tr.val_every, "Validation cadence in epochs");
  train_cmd->add_option("--lr", tr.lr, "Initial learning rate (config optimizer.lr)");
  train_cmd->add_option("--lambda-dice", tr.lambda_dice, "Dice loss weight");
  train_cmd->add_option("--lambda-ce", tr.lambda_ce, "Cross-entropy loss weight");
  train_cmd->add_option("--lambda-bcr", tr.lambda_bcr, "BCR loss weight");
  train_cmd->add_option("--bcr-eps", tr.bcr_eps, "BCR denominator offset (config bcr.eps)");
  train_cmd->add_option("--dtype", tr.dtype, "f32 | f64");
  train_cmd->add_option("--fold", tr.fold, "Cross-validation fold k/N");
  train_cmd->add_flag("--flips", tr.flips, "Random flip augmentation");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Manifest")->required();
  eval_cmd->add_option("--split", ev.split, "Split name");
  eval_cmd->add_option("--out", ev.out, "Metrics CSV")->required();
  eval_cmd->add_option("--fold", ev.fold, "Cross-validation fold k/N");
  eval_cmd->add_flag("--hd95-max-of-directed", ev.max_of_directed, "Max of directed 95th percentiles");

  EmbedArgs em;
  auto* embed_cmd = app.add_subcommand("embed", "Bottleneck embedding distances per case");
  embed_cmd->add_option("--ckpt", em.ckpt, "Checkpoint")->required();
  embed_cmd->add_option("--data", em.data, "Manifest")->required();
  embed_cmd->add_option("--out", em.out, "CSV output")->required();
  embed_cmd->add_option("--split", em.split, "Restrict to a split");

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  grad_cmd->add_option("--seed", gc.seed, "Seed");
  grad_cmd->add_flag("--float", gc.single, "Check the 32-bit engine");

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export-slices", "Write mid-axial slices as PGM images");
  export_cmd->add_option("--ckpt", ex.ckpt, "Checkpoint")->required();
  export_cmd->add_option("--data", ex.data, "Manifest")->required();
  export_cmd->add_option("--case", ex.case_id, "Case id")->required();
  export_cmd->add_option("--out", ex.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*embed_cmd) return run_embed(em);
    if (*grad_cmd) return run_gradcheck_cmd(gc);
    if (*export_cmd) return run_export(ex);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kVerification;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
