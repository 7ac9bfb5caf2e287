// Copyright 2026 The stereoqe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Versioned binary container for named tensors plus a text metadata block.
//
//   magic    8 bytes  "SQECKPT\0"
//   version  u32
//   meta     u64 length, then UTF-8 "key=value\n" lines
//   count    u64
//   tensor   u32 name length, name, u32 rank, i64 dims[rank], u8 dtype
//            (0 = float32, 1 = float64), raw little-endian values
//
// Tensors are stored bit-exactly, so save/load is lossless.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/tensor.hpp"
#include "stereoqe/nn/model.hpp"

namespace stereoqe::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'Q', 'E', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorArchive {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor<float>> tensors;

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  }
};

namespace detail {

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& where) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw IoError("truncated checkpoint " + where);
  return v;
}

}  // namespace detail

inline void save_archive(const TensorArchive& a, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put(os, kCheckpointVersion);
    std::string meta;
    for (const auto& [k, v] : a.meta) {
      if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw ValidationError("checkpoint metadata entry '" + k + "' contains a reserved character");
      }
      meta += k + "=" + v + "\n";
    }
    detail::put(os, static_cast<std::uint64_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put(os, static_cast<std::uint64_t>(a.tensors.size()));
    for (const auto& [name, t] : a.tensors) {
      detail::put(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put(os, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) detail::put(os, static_cast<std::int64_t>(d));
      detail::put(os, std::uint8_t{0});
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("short write to checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const std::string where = path.string();
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError(where + " is not a checkpoint file");
  }
  const auto version = detail::get<std::uint32_t>(is, where);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  TensorArchive a;
  const auto meta_len = detail::get<std::uint64_t>(is, where);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw IoError("truncated checkpoint " + where);
  std::istringstream ms(meta);
  for (std::string line; std::getline(ms, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed metadata line in " + where);
    a.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = detail::get<std::uint64_t>(is, where);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get<std::uint32_t>(is, where);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = detail::get<std::uint32_t>(is, where);
    if (rank > 8) throw IoError("implausible tensor rank in " + where);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::int64_t>(is, where);
    const auto dtype = detail::get<std::uint8_t>(is, where);
    Tensor<float> t(shape);
    if (dtype == 0) {
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    } else if (dtype == 1) {
      std::vector<double> tmp(t.size());
      is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(double)));
      for (std::size_t j = 0; j < tmp.size(); ++j) t[j] = static_cast<float>(tmp[j]);
    } else {
      throw IoError("unknown tensor dtype in " + where);
    }
    if (!is) throw IoError("truncated checkpoint " + where);
    a.tensors.emplace(std::move(name), std::move(t));
  }
  return a;
}

inline constexpr const char* kModelPrefix = "model/";

inline void put_model(TensorArchive& a, const ModelWeights<float>& w) {
  a.meta["variant"] = w.arch.variant;
  a.meta["channels"] = std::to_string(w.arch.channels);
  a.meta["ablate_attention"] = w.arch.ablate_attention ? "1" : "0";
  a.meta["patch_size"] = std::to_string(w.arch.patch_size);
  a.meta["rdb_layers"] = std::to_string(w.arch.rdb_layers);
  a.meta["rdb_growth"] = std::to_string(w.arch.rdb_growth);
  a.meta["ca_reduction"] = std::to_string(w.arch.ca_reduction);
  a.meta["softmax_scale"] = to_string(w.arch.softmax_scale);
  a.meta["init_seed"] = std::to_string(w.init_seed);
  a.meta["training_step"] = std::to_string(w.training_step);
  for (const auto& [k, v] : w.params) a.tensors[kModelPrefix + k] = v;
}

inline ModelWeights<float> get_model(const TensorArchive& a) {
  ModelWeights<float> w;
  try {
    w.arch.variant = a.meta_at("variant");
    w.arch.channels = std::stoi(a.meta_at("channels"));
    w.arch.ablate_attention = a.meta_at("ablate_attention") == "1";
    w.arch.patch_size = std::stoi(a.meta_at("patch_size"));
    w.arch.rdb_layers = std::stoi(a.meta_at("rdb_layers"));
    w.arch.rdb_growth = std::stoi(a.meta_at("rdb_growth"));
    w.arch.ca_reduction = std::stoi(a.meta_at("ca_reduction"));
    w.arch.softmax_scale = softmax_scale_from_string(a.meta_at("softmax_scale"));
    w.init_seed = std::stoull(a.meta_at("init_seed"));
    w.training_step = std::stoull(a.meta_at("training_step"));
  } catch (const std::logic_error& e) {
    throw ValidationError(std::string("bad checkpoint metadata: ") + e.what());
  }
  const std::string prefix = kModelPrefix;
  for (const auto& [k, v] : a.tensors) {
    if (k.rfind(prefix, 0) == 0) w.params.emplace(k.substr(prefix.size()), v);
  }
  w.validate();
  return w;
}

inline void save_weights(const ModelWeights<float>& w, const std::filesystem::path& path) {
  TensorArchive a;
  put_model(a, w);
  save_archive(a, path);
}

inline ModelWeights<float> load_weights(const std::filesystem::path& path) { return get_model(load_archive(path)); }

}  // namespace stereoqe::nn
