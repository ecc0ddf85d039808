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
#include "lonseg/checkpoint.hpp"

#include <array>
#include <fstream>

#include "json.hpp"
#include "lonseg/digest.hpp"

namespace lonseg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::array<char, 8> kMagic{'L', 'C', 'K', 'P', 'T', '\0', '\1', '\0'};

json describe(const std::vector<StoredTensor>& tensors) {
  json list = json::array();
  for (const auto& t : tensors) list.push_back({{"name", t.name}, {"shape", t.shape}});
  return list;
}

std::vector<StoredTensor> from_description(const json& list) {
  std::vector<StoredTensor> out;
  for (const auto& item : list) {
    StoredTensor t;
    t.name = item.at("name").get<std::string>();
    t.shape = item.at("shape").get<Shape>();
    t.values.resize(std::size_t(numel(t.shape)));
    out.push_back(std::move(t));
  }
  return out;
}

void check_dtype(const std::string& dtype) {
  if (dtype != "f32" && dtype != "f64") throw IoError("unsupported checkpoint dtype '" + dtype + "'");
}

template <typename Fn>
void for_each_value(const Checkpoint& c, Fn&& fn) {
  for (const auto* group : {&c.parameters, &c.momentum}) {
    for (const auto& t : *group) {
      for (double v : t.values) fn(v);
    }
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  check_dtype(c.dtype);
  const json header{{"version", c.version},           {"dtype", c.dtype},
                    {"config", c.config_json},        {"epoch", c.epoch},
                    {"rng_state", c.rng_state},       {"best_val_dice", c.best_val_dice},
                    {"best_epoch", c.best_epoch},     {"parameters", describe(c.parameters)},
                    {"momentum", describe(c.momentum)}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto length = std::uint32_t(text.size());
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), std::streamsize(text.size()));
  for_each_value(c, [&](double v) {
    if (c.dtype == "f32") {
      const float f = float(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    } else {
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  });
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + " is not a checkpoint");
  std::uint32_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  std::string text(length, '\0');
  in.read(text.data(), length);
  if (!in) throw IoError(path.string() + ": truncated header");
  Checkpoint c;
  try {
    const auto h = json::parse(text);
    c.version = h.at("version").get<std::uint32_t>();
    c.dtype = h.at("dtype").get<std::string>();
    c.config_json = h.at("config").get<std::string>();
    c.epoch = h.at("epoch").get<int>();
    c.rng_state = h.at("rng_state").get<std::string>();
    c.best_val_dice = h.at("best_val_dice").get<double>();
    c.best_epoch = h.at("best_epoch").get<int>();
    c.parameters = from_description(h.at("parameters"));
    c.momentum = from_description(h.at("momentum"));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed header (" + e.what() + ")");
  }
  if (c.version != kCheckpointVersion) {
    throw IoError(path.string() + ": checkpoint version " + std::to_string(c.version) + " not supported");
  }
  check_dtype(c.dtype);
  for (auto* group : {&c.parameters, &c.momentum}) {
    for (auto& t : *group) {
      for (double& v : t.values) {
        if (c.dtype == "f32") {
          float f = 0;
          in.read(reinterpret_cast<char*>(&f), sizeof(f));
          v = f;
        } else {
          in.read(reinterpret_cast<char*>(&v), sizeof(v));
        }
      }
    }
  }
  if (!in) throw IoError(path.string() + ": truncated tensor data");
  in.peek();
  if (!in.eof()) throw IoError(path.string() + ": trailing bytes");
  return c;
}

std::string checkpoint_digest(const Checkpoint& c) {
  Fnv1a hash;
  hash.update_value(c.epoch);
  for (const auto* group : {&c.parameters, &c.momentum}) {
    for (const auto& t : *group) {
      hash.update(t.name);
      for (Index e : t.shape) hash.update_value(e);
    }
  }
  for_each_value(c, [&](double v) {
    if (c.dtype == "f32") hash.update_value(float(v));
    else hash.update_value(v);
  });
  return hash.hex();
}

template <typename Scalar>
std::vector<StoredTensor> capture(const std::vector<NamedTensor<Scalar>>& tensors) {
  std::vector<StoredTensor> out;
  for (const auto& [name, t] : tensors) {
    StoredTensor s{name, t.shape(), std::vector<double>(std::size_t(t.numel()))};
    for (Index i = 0; i < t.numel(); ++i) s.values[i] = double(t.value()[i]);
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar>
void restore(const std::vector<NamedTensor<Scalar>>& tensors, const std::vector<StoredTensor>& stored) {
  if (tensors.size() != stored.size()) {
    throw IoError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                  std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto [name, t] = tensors[i];
    const auto& s = stored[i];
    if (s.name != name || s.shape != t.shape()) {
      throw IoError("checkpoint tensor " + s.name + " " + to_string(s.shape) + " does not match " + name + " " +
                    to_string(t.shape()));
    }
    auto& data = t.data();
    for (Index k = 0; k < data.size(); ++k) data[k] = Scalar(s.values[k]);
  }
}

template std::vector<StoredTensor> capture(const std::vector<NamedTensor<float>>&);
template std::vector<StoredTensor> capture(const std::vector<NamedTensor<double>>&);
template void restore(const std::vector<NamedTensor<float>>&, const std::vector<StoredTensor>&);
template void restore(const std::vector<NamedTensor<double>>&, const std::vector<StoredTensor>&);

}  // namespace lonseg
