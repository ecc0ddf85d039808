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

#include <filesystem>
#include <string>
#include <vector>

#include "lonseg/metrics.hpp"

namespace lonseg {

/// Float volume in C order, shape [C, D, H, W].
struct Volume {
  Shape shape;
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Extents3 extents() const { return {shape.at(1), shape.at(2), shape.at(3)}; }
};

/// `.lvol` container: 8-byte magic, u32 little-endian header length, JSON
/// header {"shape", "spacing", "dtype"}, raw little-endian payload.
void write_volume(const std::filesystem::path& path, const Volume& volume);
Volume read_volume(const std::filesystem::path& path);

/// Masks use the same container with dtype "u8" and shape [1, D, H, W].
void write_mask(const std::filesystem::path& path, const BinaryMask& mask, const Spacing3& spacing);
BinaryMask read_mask(const std::filesystem::path& path, Spacing3* spacing = nullptr);

struct ManifestEntry {
  std::string patient_id;
  std::string case_id;
  std::string current;  // paths relative to the manifest directory
  std::string prior;
  std::string mask;
  int birads_t = 0;
  int birads_prev = 0;
  std::string split;
  std::string scenario;

  bool operator==(const ManifestEntry&) const = default;
};

/// One JSON object per line.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::string manifest_line(const ManifestEntry& entry);

/// Entries of `split`. With a `k/N` fold, the patients of the train and val
/// splits are pooled and dealt round-robin in sorted id order into N folds;
/// fold k (0-based) becomes "val" and the rest "train". Other splits are
/// unaffected.
std::vector<ManifestEntry> select_split(const std::vector<ManifestEntry>& entries, const std::string& split,
                                        const std::string& fold = "");

}  // namespace lonseg
