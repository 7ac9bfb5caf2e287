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

// Stereo dataset preparation: JPEG downlink emulation at fixed quality
// factors, seeded train/test splits, a JSON manifest, and aligned crops.
//
// Raw layout: <root>/<pair_id>/left.png and <root>/<pair_id>/right.png.
// Compressed layout: <out>/jpeg/qf<QF>/<pair_id>/{left,right}.jpg.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/rng.hpp"
#include "stereoqe/image/image_io.hpp"
#include "stereoqe/image/jpeg_codec.hpp"
#include "stereoqe/image/raster.hpp"

namespace stereoqe::data {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kCodec = "jpeg-baseline";
inline constexpr const char* kChroma = "4:2:0";
inline const std::vector<int> kDatasetQfs = {30, 40, 50, 60};

struct Provenance {
  std::optional<int> qf;  // nullopt: raw
  bool raw() const { return !qf.has_value(); }
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct StereoPair {
  Raster left;
  Raster right;
  std::string pair_id;
  Provenance provenance;

  void validate() const {
    if (left.empty() || right.empty()) throw ValidationError("pair " + pair_id + ": empty view");
    if (left.height != right.height || left.width != right.width) {
      throw ValidationError("pair " + pair_id + ": left " + left.dims() + " and right " +
                            right.dims() + " differ in size");
    }
    if (provenance.qf && std::find(kDatasetQfs.begin(), kDatasetQfs.end(), *provenance.qf) == kDatasetQfs.end()) {
      throw ValidationError("pair " + pair_id + ": qf " + std::to_string(*provenance.qf) +
                            " is not one of the dataset quality factors");
    }
  }
};

struct CompressionSettings {
  int qf = 30;
  std::string codec = kCodec;

  void validate() const {
    if (qf < 1 || qf > 100) throw ConfigError("quality factor must be in [1, 100], got " + std::to_string(qf));
    if (codec != kCodec) throw ConfigError("unsupported codec '" + codec + "'");
  }
};

struct CompressedImage {
  Raster image;  // decoded from `bytes`
  std::vector<unsigned char> bytes;
  double bpp = 0.0;
};

inline double bits_per_pixel(std::size_t bytes, int height, int width) {
  return static_cast<double>(bytes) * 8.0 / (static_cast<double>(height) * width);
}

inline CompressedImage compress_image(const Raster& image, const CompressionSettings& settings) {
  settings.validate();
  if (image.empty()) throw ValidationError("cannot compress an empty image");
  CompressedImage out;
  out.bytes = jpeg::encode(image, settings.qf);
  out.image = jpeg::decode(out.bytes);
  out.bpp = bits_per_pixel(out.bytes.size(), image.height, image.width);
  return out;
}

enum class Split { kTrain, kTest, kUnused };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnused: return "unused";
  }
  return "unused";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "unused") return Split::kUnused;
  throw DatasetError("unknown split '" + s + "'");
}

struct CompressedEntry {
  fs::path left;
  fs::path right;
  double bpp_left = 0.0;
  double bpp_right = 0.0;

  double bpp() const { return 0.5 * (bpp_left + bpp_right); }
  friend bool operator==(const CompressedEntry&, const CompressedEntry&) = default;
};

struct ManifestEntry {
  std::string pair_id;
  Split split = Split::kUnused;
  int height = 0;
  int width = 0;
  fs::path raw_left;
  fs::path raw_right;
  std::map<int, CompressedEntry> compressed;  // keyed by qf

  const CompressedEntry& at_qf(int qf) const {
    auto it = compressed.find(qf);
    if (it == compressed.end()) {
      throw DatasetError("pair " + pair_id + " has no compressed artifact for qf " + std::to_string(qf));
    }
    return it->second;
  }
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SplitCounts {
  int train = 0;
  int test = 0;
  int unused = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

// Paths inside entries are absolute once loaded; they are stored relative to
// the manifest file's directory.
struct DatasetManifest {
  std::uint64_t split_seed = 0;
  std::vector<int> qfs;
  SplitCounts counts;
  std::vector<ManifestEntry> entries;

  const ManifestEntry& entry(const std::string& pair_id) const {
    for (const auto& e : entries) {
      if (e.pair_id == pair_id) return e;
    }
    throw DatasetError("pair '" + pair_id + "' is not in the manifest");
  }

  std::vector<const ManifestEntry*> in_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }

  SplitCounts tally() const {
    SplitCounts c;
    for (const auto& e : entries) {
      (e.split == Split::kTrain ? c.train : e.split == Split::kTest ? c.test : c.unused) += 1;
    }
    return c;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
      if (!ids.insert(e.pair_id).second) throw DatasetError("duplicate pair_id '" + e.pair_id + "'");
      for (const auto& [qf, c] : e.compressed) {
        if (!(c.bpp_left > 0.0) || !(c.bpp_right > 0.0)) {
          throw DatasetError("pair " + e.pair_id + " qf " + std::to_string(qf) + ": non-positive bpp");
        }
      }
    }
    if (tally() != counts) throw DatasetError("manifest split counts do not match its entries");
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Pair directories under `raw_dir` holding left.png and right.png, sorted by id.
inline std::vector<std::string> discover_pairs(const fs::path& raw_dir) {
  if (!fs::is_directory(raw_dir)) throw IoError("input directory not found: " + raw_dir.string());
  std::vector<std::string> ids;
  for (const auto& d : fs::directory_iterator(raw_dir)) {
    if (!d.is_directory()) continue;
    const bool l = fs::exists(d.path() / "left.png");
    const bool r = fs::exists(d.path() / "right.png");
    if (l != r) {
      throw DatasetError("pair " + d.path().filename().string() + " is missing its " +
                         (l ? "right.png" : "left.png"));
    }
    if (l) ids.push_back(d.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Seeded partition of the sorted ids: first n_train train, next n_test test,
// remainder unused.
inline std::map<std::string, Split> assign_splits(std::vector<std::string> ids, std::uint64_t seed,
                                                  int n_train, int n_test) {
  if (n_train < 0 || n_test < 0) throw ConfigError("split sizes must be non-negative");
  if (static_cast<std::size_t>(n_train) + static_cast<std::size_t>(n_test) > ids.size()) {
    throw DatasetError("need " + std::to_string(n_train + n_test) + " pairs for the split, found " +
                       std::to_string(ids.size()));
  }
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);
  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto n = static_cast<std::size_t>(n_train);
    out[ids[i]] = i < n ? Split::kTrain : i < n + static_cast<std::size_t>(n_test) ? Split::kTest : Split::kUnused;
  }
  return out;
}

inline StereoPair load_raw_pair(const fs::path& raw_dir, const std::string& pair_id) {
  StereoPair p{png::read(raw_dir / pair_id / "left.png"), png::read(raw_dir / pair_id / "right.png"),
               pair_id, {}};
  p.validate();
  return p;
}

inline DatasetManifest build_dataset(const fs::path& raw_dir, const fs::path& out_dir,
                                     const std::vector<int>& qfs, std::uint64_t seed, int n_train,
                                     int n_test) {
  if (qfs.empty()) throw ConfigError("at least one quality factor is required");
  for (int qf : qfs) {
    CompressionSettings{qf}.validate();
    if (std::find(kDatasetQfs.begin(), kDatasetQfs.end(), qf) == kDatasetQfs.end()) {
      throw ConfigError("dataset quality factors are limited to 30, 40, 50 and 60, got " + std::to_string(qf));
    }
  }
  const auto ids = discover_pairs(raw_dir);
  const auto splits = assign_splits(ids, seed, n_train, n_test);

  DatasetManifest m;
  m.split_seed = seed;
  m.qfs = qfs;
  std::sort(m.qfs.begin(), m.qfs.end());
  m.qfs.erase(std::unique(m.qfs.begin(), m.qfs.end()), m.qfs.end());
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  for (const auto& id : ids) {
    const StereoPair pair = load_raw_pair(raw_dir, id);
    ManifestEntry e;
    e.pair_id = id;
    e.split = splits.at(id);
    e.height = pair.left.height;
    e.width = pair.left.width;
    e.raw_left = fs::absolute(raw_dir / id / "left.png").lexically_normal();
    e.raw_right = fs::absolute(raw_dir / id / "right.png").lexically_normal();
    for (int qf : m.qfs) {
      const fs::path dir = out_dir / "jpeg" / ("qf" + std::to_string(qf)) / id;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
      const auto cl = jpeg::encode(pair.left, qf);
      const auto cr = jpeg::encode(pair.right, qf);
      jpeg::write_bytes(dir / "left.jpg", cl);
      jpeg::write_bytes(dir / "right.jpg", cr);
      e.compressed[qf] = {fs::absolute(dir / "left.jpg").lexically_normal(),
                          fs::absolute(dir / "right.jpg").lexically_normal(),
                          bits_per_pixel(cl.size(), e.height, e.width),
                          bits_per_pixel(cr.size(), e.height, e.width)};
    }
    m.entries.push_back(std::move(e));
  }
  m.counts = m.tally();
  m.validate();
  return m;
}

// ---- manifest file ---------------------------------------------------------

inline nlohmann::json to_json(const DatasetManifest& m, const fs::path& base) {
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  nlohmann::json j;
  j["format"] = "stereoqe-manifest";
  j["version"] = kManifestVersion;
  j["codec"] = kCodec;
  j["chroma_subsampling"] = kChroma;
  j["split_seed"] = m.split_seed;
  j["qfs"] = m.qfs;
  j["counts"] = {{"train", m.counts.train}, {"test", m.counts.test}, {"unused", m.counts.unused}};
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["pair_id"] = e.pair_id;
    je["split"] = to_string(e.split);
    je["height"] = e.height;
    je["width"] = e.width;
    je["raw"] = {{"left", rel(e.raw_left)}, {"right", rel(e.raw_right)}};
    je["compressed"] = nlohmann::json::array();
    for (const auto& [qf, c] : e.compressed) {
      je["compressed"].push_back({{"qf", qf},
                                  {"left", rel(c.left)},
                                  {"right", rel(c.right)},
                                  {"bpp_left", c.bpp_left},
                                  {"bpp_right", c.bpp_right},
                                  {"bpp", c.bpp()}});
    }
    entries.push_back(std::move(je));
  }
  return j;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json(m, base).dump(2) << '\n';
  if (!out) throw IoError("short write to manifest " + path.string());
}

inline DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "stereoqe-manifest") throw DatasetError("not a manifest file");
    const int version = j.at("version").get<int>();
    if (version != kManifestVersion) {
      throw DatasetError("unsupported manifest version " + std::to_string(version));
    }
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.qfs = j.at("qfs").get<std::vector<int>>();
    m.counts = {j.at("counts").at("train").get<int>(), j.at("counts").at("test").get<int>(),
                j.at("counts").at("unused").get<int>()};
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.pair_id = je.at("pair_id").get<std::string>();
      e.split = split_from_string(je.at("split").get<std::string>());
      e.height = je.at("height").get<int>();
      e.width = je.at("width").get<int>();
      e.raw_left = (base / je.at("raw").at("left").get<std::string>()).lexically_normal();
      e.raw_right = (base / je.at("raw").at("right").get<std::string>()).lexically_normal();
      for (const auto& jc : je.at("compressed")) {
        e.compressed[jc.at("qf").get<int>()] = {
            (base / jc.at("left").get<std::string>()).lexically_normal(),
            (base / jc.at("right").get<std::string>()).lexically_normal(),
            jc.at("bpp_left").get<double>(), jc.at("bpp_right").get<double>()};
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DatasetError("malformed manifest " + path.string() + ": " + ex.what());
  }
  m.validate();
  return m;
}

// ---- loading and crops -----------------------------------------------------

inline StereoPair load_pair(const ManifestEntry& e, std::optional<int> qf) {
  StereoPair p;
  p.pair_id = e.pair_id;
  p.provenance.qf = qf;
  if (qf) {
    const auto& c = e.at_qf(*qf);
    p.left = jpeg::read(c.left);
    p.right = jpeg::read(c.right);
  } else {
    p.left = png::read(e.raw_left);
    p.right = png::read(e.raw_right);
  }
  if (p.left.height != e.height || p.left.width != e.width) {
    throw DatasetError("pair " + e.pair_id + ": stored image is " + p.left.dims() +
                       ", manifest says " + std::to_string(e.height) + "x" + std::to_string(e.width));
  }
  p.validate();
  return p;
}

struct CropOrigin {
  int x = 0;
  int y = 0;
  friend bool operator==(const CropOrigin&, const CropOrigin&) = default;
};

struct TrainingCrop {
  Raster compressed_left;
  Raster compressed_right;
  Raster raw_left;
  Raster raw_right;
  CropOrigin origin;
  std::string pair_id;
  int qf = 0;
};

inline constexpr int kPatchMultiple = 16;

// Draws an origin uniformly over all valid positions.
inline CropOrigin draw_crop_origin(int height, int width, int crop_size, Rng& rng) {
  if (crop_size < 1 || crop_size % kPatchMultiple != 0) {
    throw ValidationError("crop size must be a positive multiple of " + std::to_string(kPatchMultiple) +
                          ", got " + std::to_string(crop_size));
  }
  if (crop_size > height || crop_size > width) {
    throw ValidationError("crop size " + std::to_string(crop_size) + " exceeds image " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  CropOrigin o;
  o.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - crop_size + 1)));
  o.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - crop_size + 1)));
  return o;
}

inline TrainingCrop crop_pairs(const StereoPair& compressed, const StereoPair& raw, CropOrigin o, int crop_size) {
  TrainingCrop c;
  c.compressed_left = crop_raster(compressed.left, o.y, o.x, crop_size, crop_size);
  c.compressed_right = crop_raster(compressed.right, o.y, o.x, crop_size, crop_size);
  c.raw_left = crop_raster(raw.left, o.y, o.x, crop_size, crop_size);
  c.raw_right = crop_raster(raw.right, o.y, o.x, crop_size, crop_size);
  c.origin = o;
  c.pair_id = raw.pair_id;
  c.qf = compressed.provenance.qf.value_or(0);
  return c;
}

inline TrainingCrop sample_training_crop(const DatasetManifest& manifest, const std::string& pair_id,
                                         int qf, int crop_size, Rng& rng) {
  const auto& e = manifest.entry(pair_id);
  if (e.split != Split::kTrain) {
    throw ValidationError("pair " + pair_id + " is in the " + to_string(e.split) +
                          " split; crops are only drawn from train pairs");
  }
  const CropOrigin o = draw_crop_origin(e.height, e.width, crop_size, rng);
  return crop_pairs(load_pair(e, qf), load_pair(e, std::nullopt), o, crop_size);
}

inline Raster flip_horizontal(const Raster& r) {
  Raster out(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, r.width - 1 - x, c) = r.at(y, x, c);
    }
  }
  return out;
}

// Mirrors every raster and exchanges the views, which keeps the disparity
// sign of a rectified pair.
inline TrainingCrop flip_swap(const TrainingCrop& c) {
  TrainingCrop out = c;
  out.compressed_left = flip_horizontal(c.compressed_right);
  out.compressed_right = flip_horizontal(c.compressed_left);
  out.raw_left = flip_horizontal(c.raw_right);
  out.raw_right = flip_horizontal(c.raw_left);
  return out;
}

}  // namespace stereoqe::data
