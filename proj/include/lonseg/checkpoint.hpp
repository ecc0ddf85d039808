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
#include <string>
#include <vector>

#include "lonseg/layers.hpp"

namespace lonseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const StoredTensor&) const = default;
};

/// Binary layout: 8-byte magic `LCKPT\0\1\0`, u32 little-endian header
/// length, JSON header (version, dtype, config, epoch, RNG state, tensor
/// names and shapes), then every tensor's values in `dtype`, parameters
/// first and momentum buffers after.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string dtype = "f32";
  std::string config_json;
  std::vector<StoredTensor> parameters;
  std::vector<StoredTensor> momentum;
  int epoch = 0;
  std::string rng_state;
  double best_val_dice = -1;
  int best_epoch = -1;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the stored parameter and momentum values (in `dtype`) and the
/// epoch. Independent of the config echo, so output paths do not matter.
std::string checkpoint_digest(const Checkpoint& checkpoint);

template <typename Scalar>
std::vector<StoredTensor> capture(const std::vector<NamedTensor<Scalar>>& tensors);

/// Copies values into existing leaf tensors. Throws IoError when names or
/// shapes disagree.
template <typename Scalar>
void restore(const std::vector<NamedTensor<Scalar>>& tensors, const std::vector<StoredTensor>& stored);

}  // namespace lonseg
