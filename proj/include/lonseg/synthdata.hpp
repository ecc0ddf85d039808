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

// Procedural longitudinal phantoms: a band-limited parenchymal background
// shared by both scans (the prior sees it through a smooth random warp),
// soft-edged ellipsoidal lesions and additive Gaussian noise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lonseg/metrics.hpp"
#include "lonseg/volume_io.hpp"

namespace lonseg {

enum class Scenario { stable, new_lesion, growing };

std::string to_string(Scenario scenario);
Scenario parse_scenario(const std::string& text);

struct PhantomSpec {
  Extents3 extents{16, 32, 32};
  Spacing3 spacing{2.0, 0.7, 0.7};
  int lesions_min = 1;
  int lesions_max = 2;
  double radius_min = 3.0;  // in-plane semi-axis, voxels
  double radius_max = 5.0;
  double contrast_min = 0.8;
  double contrast_max = 1.2;
  double texture_scale = 6.0;  // value-noise lattice period, voxels
  double texture_amplitude = 0.4;
  double noise_sigma = 0.05;
  double warp_amplitude = 0.75;  // voxels
  double growth_min = 1.3;       // radius factor between scans
  double growth_max = 1.7;
  double birads_growth_factor = 1.5;  // volume ratio that obliges birads_t >= birads_prev
  std::uint64_t seed = 1;

  /// Throws ConfigError on empty ranges, radii below one voxel or a
  /// contrast that does not exceed the noise level.
  void validate() const;
};

struct CasePair {
  std::string patient_id;
  std::string case_id;
  Scenario scenario = Scenario::stable;
  std::string split;
  Volume x_prev;
  Volume x_t;
  BinaryMask y_t;
  int birads_prev = 0;
  int birads_t = 0;
  double volume_ratio = 1.0;  // lesion volume at t over t-1 (inf when new)
};

/// Throws std::invalid_argument when a lesion cannot fit inside the volume.
CasePair generate_case(const PhantomSpec& spec, Scenario scenario, std::uint64_t seed);

/// birads_t >= birads_prev whenever the lesion volume grew by more than the
/// configured factor; both scores inside [0, 6].
bool birads_consistent(const CasePair& c, const PhantomSpec& spec);

struct ScenarioMix {
  double stable = 1.0;
  double new_lesion = 1.0;
  double growing = 1.0;
};

struct DatasetSpec {
  PhantomSpec phantom;
  int cases = 40;
  int cases_per_patient = 1;
  ScenarioMix mix;
  double train_fraction = 0.8;
  double val_fraction = 0.2;  // the remainder goes to "test"
  std::uint64_t seed = 1;

  void validate() const;
};

DatasetSpec dataset_spec_from_json(const std::string& text);
std::string to_json(const DatasetSpec& spec);

struct DatasetSummary {
  std::filesystem::path manifest;
  std::vector<ManifestEntry> entries;
  std::string digest;  // over the manifest and every file it references
};

/// Writes `cases/*.lvol` and `manifest.jsonl` under `out_dir`.
DatasetSummary generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// Scenario per case index: largest-remainder allocation of the mix, then a
/// seeded shuffle.
std::vector<Scenario> allocate_scenarios(const ScenarioMix& mix, int cases, std::uint64_t seed);

/// FNV-1a digest of a manifest file and the files it references.
std::string dataset_digest(const std::filesystem::path& manifest);

}  // namespace lonseg
