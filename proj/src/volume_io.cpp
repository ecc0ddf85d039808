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
#include "lonseg/volume_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lonseg {

static_assert(std::endian::native == std::endian::little, "lvol payloads are read and written in host byte order");

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::array<char, 8> kMagic{'L', 'V', 'O', 'L', '\0', '\1', '\0', '\0'};

struct Header {
  Shape shape;
  Spacing3 spacing;
  std::string dtype;
};

void write_container(const fs::path& path, const Header& header, const void* payload, std::size_t bytes) {
  const json j{{"shape", header.shape}, {"spacing", header.spacing}, {"dtype", header.dtype}};
  const std::string text = j.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto length = std::uint32_t(text.size());
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), std::streamsize(text.size()));
  out.write(static_cast<const char*>(payload), std::streamsize(bytes));
  if (!out) throw IoError("write failed for " + path.string());
}

Header read_header(std::ifstream& in, const fs::path& path) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + " is not an lvol file");
  std::uint32_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || length > (1u << 20)) throw IoError(path.string() + ": bad header length");
  std::string text(length, '\0');
  in.read(text.data(), length);
  if (!in) throw IoError(path.string() + ": truncated header");
  Header header;
  try {
    const auto j = json::parse(text);
    header.shape = j.at("shape").get<Shape>();
    header.spacing = j.at("spacing").get<Spacing3>();
    header.dtype = j.at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed header (" + e.what() + ")");
  }
  if (header.shape.size() != 4) throw IoError(path.string() + ": expected a 4-D shape");
  for (Index e : header.shape) {
    if (e < 1) throw IoError(path.string() + ": non-positive extent");
  }
  return header;
}

std::ifstream open_for_read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void read_payload(std::ifstream& in, const fs::path& path, void* out, std::size_t bytes) {
  in.read(static_cast<char*>(out), std::streamsize(bytes));
  if (!in) throw IoError(path.string() + ": truncated payload");
  in.peek();
  if (!in.eof()) throw IoError(path.string() + ": trailing bytes after payload");
}

}  // namespace

void write_volume(const fs::path& path, const Volume& volume) {
  if (volume.shape.size() != 4) throw ShapeError("volume shape must be C x D x H x W, got " + to_string(volume.shape));
  if (Index(volume.data.size()) != numel(volume.shape)) {
    throw ShapeError("volume data size does not match shape " + to_string(volume.shape));
  }
  write_container(path, {volume.shape, volume.spacing, "f32"}, volume.data.data(), volume.data.size() * sizeof(float));
}

Volume read_volume(const fs::path& path) {
  auto in = open_for_read(path);
  const auto header = read_header(in, path);
  if (header.dtype != "f32") throw IoError(path.string() + ": expected dtype f32, got " + header.dtype);
  Volume v;
  v.shape = header.shape;
  v.spacing = header.spacing;
  v.data.resize(std::size_t(numel(v.shape)));
  read_payload(in, path, v.data.data(), v.data.size() * sizeof(float));
  return v;
}

void write_mask(const fs::path& path, const BinaryMask& mask, const Spacing3& spacing) {
  for (auto v : mask.voxels) {
    if (v > 1) throw std::invalid_argument("mask values must be 0 or 1");
  }
  const Shape shape{1, mask.extents[0], mask.extents[1], mask.extents[2]};
  write_container(path, {shape, spacing, "u8"}, mask.voxels.data(), mask.voxels.size());
}

BinaryMask read_mask(const fs::path& path, Spacing3* spacing) {
  auto in = open_for_read(path);
  const auto header = read_header(in, path);
  if (header.dtype != "u8") throw IoError(path.string() + ": expected dtype u8, got " + header.dtype);
  if (header.shape[0] != 1) throw IoError(path.string() + ": masks must have one channel");
  BinaryMask mask({header.shape[1], header.shape[2], header.shape[3]});
  read_payload(in, path, mask.voxels.data(), mask.voxels.size());
  for (auto v : mask.voxels) {
    if (v > 1) throw IoError(path.string() + ": mask value outside {0, 1}");
  }
  if (spacing) *spacing = header.spacing;
  return mask;
}

std::string manifest_line(const ManifestEntry& e) {
  const json j{{"patient_id", e.patient_id}, {"case_id", e.case_id},     {"current", e.current},
               {"prior", e.prior},           {"mask", e.mask},           {"birads_t", e.birads_t},
               {"birads_prev", e.birads_prev}, {"split", e.split},       {"scenario", e.scenario}};
  return j.dump();
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) out << manifest_line(e) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ManifestEntry e;
      e.patient_id = j.at("patient_id").get<std::string>();
      e.case_id = j.at("case_id").get<std::string>();
      e.current = j.at("current").get<std::string>();
      e.prior = j.at("prior").get<std::string>();
      e.mask = j.at("mask").get<std::string>();
      e.birads_t = j.at("birads_t").get<int>();
      e.birads_prev = j.at("birads_prev").get<int>();
      e.split = j.at("split").get<std::string>();
      e.scenario = j.value("scenario", "");
      entries.push_back(std::move(e));
    } catch (const json::exception& err) {
      throw IoError(path.string() + ":" + std::to_string(number) + ": " + err.what());
    }
  }
  return entries;
}

std::vector<ManifestEntry> select_split(const std::vector<ManifestEntry>& entries, const std::string& split,
                                        const std::string& fold) {
  std::vector<ManifestEntry> out;
  if (fold.empty() || (split != "train" && split != "val")) {
    for (const auto& e : entries) {
      if (e.split == split) out.push_back(e);
    }
    return out;
  }
  int k = -1, n = 0;
  char slash = 0;
  std::istringstream parse(fold);
  if (!(parse >> k >> slash >> n) || slash != '/' || n < 2 || k < 0 || k >= n || !parse.eof()) {
    throw ConfigError("fold must look like k/N with 0 <= k < N and N >= 2, got '" + fold + "'");
  }
  std::set<std::string> pooled;
  for (const auto& e : entries) {
    if (e.split == "train" || e.split == "val") pooled.insert(e.patient_id);
  }
  std::map<std::string, int> fold_of;
  int i = 0;
  for (const auto& id : pooled) fold_of[id] = i++ % n;
  for (const auto& e : entries) {
    auto it = fold_of.find(e.patient_id);
    if (it == fold_of.end()) continue;
    const bool held_out = it->second == k;
    if ((split == "val") == held_out) out.push_back(e);
  }
  return out;
}

}  // namespace lonseg
