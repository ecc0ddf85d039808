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
#include "lonseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "json.hpp"
#include "lonseg/digest.hpp"

namespace lonseg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Trilinear value noise with smoothstep weights.
class ValueNoise {
 public:
  ValueNoise(const Extents3& extents, double period, std::mt19937_64& rng) : period_(period) {
    for (int a = 0; a < 3; ++a) dims_[a] = Index(std::ceil(double(extents[a]) / period)) + 3;
    values_.resize(std::size_t(dims_[0] * dims_[1] * dims_[2]));
    for (auto& v : values_) v = uniform(rng, 0.0, 1.0);
  }

  double operator()(double z, double y, double x) const {
    const std::array<double, 3> p{z / period_ + 1.0, y / period_ + 1.0, x / period_ + 1.0};
    std::array<Index, 3> i0{};
    std::array<double, 3> w{};
    for (int a = 0; a < 3; ++a) {
      const double c = std::clamp(p[a], 0.0, double(dims_[a] - 1) - 1e-9);
      i0[a] = Index(std::floor(c));
      const double f = c - double(i0[a]);
      w[a] = f * f * (3.0 - 2.0 * f);
    }
    double out = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double weight = (dz ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) * (dx ? w[2] : 1 - w[2]);
          out += weight * at(i0[0] + dz, i0[1] + dy, i0[2] + dx);
        }
    return out;
  }

 private:
  double at(Index z, Index y, Index x) const { return values_[std::size_t((z * dims_[1] + y) * dims_[2] + x)]; }

  double period_;
  std::array<Index, 3> dims_{};
  std::vector<double> values_;
};

struct Lesion {
  std::array<double, 3> center;
  std::array<double, 3> radii;  // voxels, at time t
  double contrast;
};

double normalized_radius(const Lesion& l, double scale, Index z, Index y, Index x) {
  const double dz = (double(z) - l.center[0]) / (l.radii[0] * scale);
  const double dy = (double(y) - l.center[1]) / (l.radii[1] * scale);
  const double dx = (double(x) - l.center[2]) / (l.radii[2] * scale);
  return dz * dz + dy * dy + dx * dx;
}

Lesion place_lesion(const PhantomSpec& spec, std::mt19937_64& rng) {
  Lesion l;
  const double r = uniform(rng, spec.radius_min, spec.radius_max);
  l.radii = {std::max(1.0, r * spec.spacing[2] / spec.spacing[0]), r * uniform(rng, 0.85, 1.15), r};
  l.radii[1] = std::max(1.0, l.radii[1]);
  for (int a = 0; a < 3; ++a) {
    const double lo = l.radii[a], hi = double(spec.extents[a] - 1) - l.radii[a];
    if (hi < lo) {
      throw std::invalid_argument("lesion semi-axis " + std::to_string(l.radii[a]) + " does not fit extent " +
                                  std::to_string(spec.extents[a]));
    }
    l.center[a] = uniform(rng, lo, hi);
  }
  l.contrast = uniform(rng, spec.contrast_min, spec.contrast_max);
  return l;
}

// Gaussian falloff reaching half maximum on the ellipsoid surface.
void paint_lesions(std::vector<float>& image, const Extents3& e, const std::vector<Lesion>& lesions, double scale) {
  const double ln2 = std::log(2.0);
  for (const auto& l : lesions) {
    for (Index z = 0; z < e[0]; ++z)
      for (Index y = 0; y < e[1]; ++y)
        for (Index x = 0; x < e[2]; ++x) {
          const double q2 = normalized_radius(l, scale, z, y, x);
          image[std::size_t((z * e[1] + y) * e[2] + x)] += float(l.contrast * std::exp(-ln2 * q2));
        }
  }
}

BinaryMask lesion_mask(const Extents3& e, const std::vector<Lesion>& lesions, double scale) {
  BinaryMask mask(e);
  for (const auto& l : lesions) {
    for (Index z = 0; z < e[0]; ++z)
      for (Index y = 0; y < e[1]; ++y)
        for (Index x = 0; x < e[2]; ++x) {
          if (normalized_radius(l, scale, z, y, x) <= 1.0) mask.at(z, y, x) = 1;
        }
  }
  return mask;
}

double lesion_volume(const std::vector<Lesion>& lesions, double scale) {
  double v = 0;
  for (const auto& l : lesions) v += l.radii[0] * l.radii[1] * l.radii[2] * scale * scale * scale;
  return v;
}

void add_noise(std::vector<float>& image, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : image) v += float(noise(rng));
}

Volume empty_volume(const PhantomSpec& spec) {
  Volume v;
  v.shape = {1, spec.extents[0], spec.extents[1], spec.extents[2]};
  v.spacing = spec.spacing;
  v.data.assign(std::size_t(numel(v.shape)), 0.0f);
  return v;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::stable: return "stable";
    case Scenario::new_lesion: return "new-lesion";
    case Scenario::growing: return "growing-lesion";
  }
  return "stable";
}

Scenario parse_scenario(const std::string& text) {
  if (text == "stable") return Scenario::stable;
  if (text == "new-lesion" || text == "new") return Scenario::new_lesion;
  if (text == "growing-lesion" || text == "growing") return Scenario::growing;
  throw ConfigError("unknown scenario '" + text + "'");
}

void PhantomSpec::validate() const {
  for (Index e : extents) {
    if (e < 1) throw ConfigError("phantom extents must be positive");
  }
  for (double s : spacing) {
    if (!(s > 0)) throw ConfigError("phantom spacing must be positive");
  }
  if (lesions_min < 1 || lesions_max < lesions_min) throw ConfigError("lesion count range is empty");
  if (radius_min < 1.0 || radius_max < radius_min) throw ConfigError("lesion radii must satisfy 1 <= min <= max");
  if (contrast_max < contrast_min) throw ConfigError("lesion contrast range is empty");
  if (!(contrast_min > noise_sigma)) throw ConfigError("lesion contrast must exceed the noise sigma");
  if (!(texture_scale > 0) || texture_amplitude < 0 || noise_sigma < 0 || warp_amplitude < 0) {
    throw ConfigError("texture scale must be positive; amplitudes and sigmas non-negative");
  }
  if (growth_min < 1.0 || growth_max < growth_min) throw ConfigError("growth range must satisfy 1 <= min <= max");
}

CasePair generate_case(const PhantomSpec& spec, Scenario scenario, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const auto& e = spec.extents;

  const ValueNoise texture(e, spec.texture_scale, rng);
  std::array<std::optional<ValueNoise>, 3> warp;
  for (auto& w : warp) w.emplace(e, 2.0 * spec.texture_scale, rng);

  const int count = uniform_int(rng, spec.lesions_min, spec.lesions_max);
  std::vector<Lesion> lesions;
  for (int i = 0; i < count; ++i) lesions.push_back(place_lesion(spec, rng));

  CasePair c;
  c.scenario = scenario;
  c.x_t = empty_volume(spec);
  c.x_prev = empty_volume(spec);
  for (Index z = 0; z < e[0]; ++z)
    for (Index y = 0; y < e[1]; ++y)
      for (Index x = 0; x < e[2]; ++x) {
        const auto i = std::size_t((z * e[1] + y) * e[2] + x);
        c.x_t.data[i] = float(spec.texture_amplitude * texture(double(z), double(y), double(x)));
        double pz = double(z), py = double(y), px = double(x);
        if (spec.warp_amplitude > 0) {
          pz += spec.warp_amplitude * (2.0 * (*warp[0])(z, y, x) - 1.0);
          py += spec.warp_amplitude * (2.0 * (*warp[1])(z, y, x) - 1.0);
          px += spec.warp_amplitude * (2.0 * (*warp[2])(z, y, x) - 1.0);
        }
        c.x_prev.data[i] = float(spec.texture_amplitude * texture(pz, py, px));
      }

  double prior_scale = 1.0;
  switch (scenario) {
    case Scenario::stable:
      c.birads_prev = c.birads_t = 3;
      break;
    case Scenario::new_lesion:
      prior_scale = 0.0;
      c.birads_prev = uniform_int(rng, 2, 3);
      c.birads_t = 4;
      break;
    case Scenario::growing:
      prior_scale = 1.0 / uniform(rng, spec.growth_min, spec.growth_max);
      c.birads_prev = uniform_int(rng, 3, 4);
      c.birads_t = c.birads_prev == 3 ? uniform_int(rng, 4, 5) : 5;
      break;
  }
  paint_lesions(c.x_t.data, e, lesions, 1.0);
  if (prior_scale > 0) paint_lesions(c.x_prev.data, e, lesions, prior_scale);
  c.y_t = lesion_mask(e, lesions, 1.0);
  const double prior_volume = lesion_volume(lesions, prior_scale);
  c.volume_ratio = prior_volume > 0 ? lesion_volume(lesions, 1.0) / prior_volume
                                    : std::numeric_limits<double>::infinity();

  add_noise(c.x_t.data, spec.noise_sigma, rng);
  add_noise(c.x_prev.data, spec.noise_sigma, rng);
  return c;
}

bool birads_consistent(const CasePair& c, const PhantomSpec& spec) {
  const auto in_range = [](int s) { return s >= 0 && s <= 6; };
  if (!in_range(c.birads_t) || !in_range(c.birads_prev)) return false;
  return c.volume_ratio <= spec.birads_growth_factor || c.birads_t >= c.birads_prev;
}

void DatasetSpec::validate() const {
  phantom.validate();
  if (cases < 1) throw ConfigError("dataset needs at least one case");
  if (cases_per_patient < 1) throw ConfigError("cases_per_patient must be positive");
  if (mix.stable < 0 || mix.new_lesion < 0 || mix.growing < 0 || mix.stable + mix.new_lesion + mix.growing <= 0) {
    throw ConfigError("scenario mix weights must be non-negative with a positive sum");
  }
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
}

DatasetSpec dataset_spec_from_json(const std::string& text) {
  DatasetSpec s;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("dataset spec must be a JSON object");
    static const std::set<std::string> known{
        "extents",        "spacing",        "lesions_min",     "lesions_max",    "radius_min",
        "radius_max",     "contrast_min",   "contrast_max",    "texture_scale",  "texture_amplitude",
        "noise_sigma",    "warp_amplitude", "growth_min",      "growth_max",     "birads_growth_factor",
        "cases",          "cases_per_patient", "mix",          "train_fraction", "val_fraction",
        "seed"};
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ConfigError("unknown dataset spec key '" + key + "'");
    }
    auto& p = s.phantom;
    read_key(j, "extents", p.extents);
    read_key(j, "spacing", p.spacing);
    read_key(j, "lesions_min", p.lesions_min);
    read_key(j, "lesions_max", p.lesions_max);
    read_key(j, "radius_min", p.radius_min);
    read_key(j, "radius_max", p.radius_max);
    read_key(j, "contrast_min", p.contrast_min);
    read_key(j, "contrast_max", p.contrast_max);
    read_key(j, "texture_scale", p.texture_scale);
    read_key(j, "texture_amplitude", p.texture_amplitude);
    read_key(j, "noise_sigma", p.noise_sigma);
    read_key(j, "warp_amplitude", p.warp_amplitude);
    read_key(j, "growth_min", p.growth_min);
    read_key(j, "growth_max", p.growth_max);
    read_key(j, "birads_growth_factor", p.birads_growth_factor);
    read_key(j, "cases", s.cases);
    read_key(j, "cases_per_patient", s.cases_per_patient);
    if (j.contains("mix")) {
      const auto& m = j.at("mix");
      read_key(m, "stable", s.mix.stable);
      read_key(m, "new_lesion", s.mix.new_lesion);
      read_key(m, "growing", s.mix.growing);
    }
    read_key(j, "train_fraction", s.train_fraction);
    read_key(j, "val_fraction", s.val_fraction);
    read_key(j, "seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
  s.phantom.seed = s.seed;
  s.validate();
  return s;
}

std::string to_json(const DatasetSpec& s) {
  const auto& p = s.phantom;
  const json j{{"extents", p.extents},
               {"spacing", p.spacing},
               {"lesions_min", p.lesions_min},
               {"lesions_max", p.lesions_max},
               {"radius_min", p.radius_min},
               {"radius_max", p.radius_max},
               {"contrast_min", p.contrast_min},
               {"contrast_max", p.contrast_max},
               {"texture_scale", p.texture_scale},
               {"texture_amplitude", p.texture_amplitude},
               {"noise_sigma", p.noise_sigma},
               {"warp_amplitude", p.warp_amplitude},
               {"growth_min", p.growth_min},
               {"growth_max", p.growth_max},
               {"birads_growth_factor", p.birads_growth_factor},
               {"cases", s.cases},
               {"cases_per_patient", s.cases_per_patient},
               {"mix", {{"stable", s.mix.stable}, {"new_lesion", s.mix.new_lesion}, {"growing", s.mix.growing}}},
               {"train_fraction", s.train_fraction},
               {"val_fraction", s.val_fraction},
               {"seed", s.seed}};
  return j.dump(2);
}

std::vector<Scenario> allocate_scenarios(const ScenarioMix& mix, int cases, std::uint64_t seed) {
  const std::array<double, 3> weights{mix.stable, mix.new_lesion, mix.growing};
  const std::array<Scenario, 3> kinds{Scenario::stable, Scenario::new_lesion, Scenario::growing};
  const double total = weights[0] + weights[1] + weights[2];
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = cases * weights[k] / total;
    counts[k] = int(std::floor(exact));
    remainder[k] = exact - counts[k];
    assigned += counts[k];
  }
  while (assigned < cases) {
    const int k = int(std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
    ++counts[k];
    remainder[k] = -1;
    ++assigned;
  }
  std::vector<Scenario> out;
  for (int k = 0; k < 3; ++k) out.insert(out.end(), counts[k], kinds[k]);
  std::mt19937_64 rng(splitmix64(seed ^ 0x5ce7a710ULL));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

DatasetSummary generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "cases", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "cases").string() + ": " + ec.message());

  const int patients = (spec.cases + spec.cases_per_patient - 1) / spec.cases_per_patient;
  std::vector<int> order(patients);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(splitmix64(spec.seed ^ 0x5b117ULL));
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_train = int(std::lround(patients * spec.train_fraction));
  const int n_val = std::min(patients - n_train, int(std::lround(patients * spec.val_fraction)));
  std::vector<std::string> split_of(patients, "test");
  for (int i = 0; i < patients; ++i) {
    if (i < n_train) split_of[order[i]] = "train";
    else if (i < n_train + n_val) split_of[order[i]] = "val";
  }

  const auto scenarios = allocate_scenarios(spec.mix, spec.cases, spec.seed);
  DatasetSummary summary;
  summary.manifest = out_dir / "manifest.jsonl";
  char buffer[32];
  for (int i = 0; i < spec.cases; ++i) {
    const int patient = i / spec.cases_per_patient;
    std::snprintf(buffer, sizeof(buffer), "P%04d", patient);
    const std::string patient_id = buffer;
    std::snprintf(buffer, sizeof(buffer), "_%02d", i % spec.cases_per_patient);
    const std::string case_id = patient_id + buffer;

    auto c = generate_case(spec.phantom, scenarios[i], splitmix64(spec.seed + 0x1000ULL * std::uint64_t(i + 1)));
    if (!birads_consistent(c, spec.phantom)) throw VerificationError("case " + case_id + " violates BI-RADS rule");
    ManifestEntry entry{patient_id,  case_id,       "cases/" + case_id + "_t.lvol", "cases/" + case_id + "_prev.lvol",
                        "cases/" + case_id + "_mask.lvol", c.birads_t, c.birads_prev, split_of[patient],
                        to_string(c.scenario)};
    write_volume(out_dir / entry.current, c.x_t);
    write_volume(out_dir / entry.prior, c.x_prev);
    write_mask(out_dir / entry.mask, c.y_t, spec.phantom.spacing);
    summary.entries.push_back(std::move(entry));
  }
  write_manifest(summary.manifest, summary.entries);
  summary.digest = dataset_digest(summary.manifest);
  return summary;
}

std::string dataset_digest(const fs::path& manifest) {
  Fnv1a hash;
  const auto text = slurp(manifest);
  hash.update(text.data(), text.size());
  for (const auto& e : read_manifest(manifest)) {
    for (const auto* rel : {&e.current, &e.prior, &e.mask}) {
      const auto bytes = slurp(manifest.parent_path() / *rel);
      hash.update(bytes.data(), bytes.size());
    }
  }
  return hash.hex();
}

}  // namespace lonseg
