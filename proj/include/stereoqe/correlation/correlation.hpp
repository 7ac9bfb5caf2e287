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

// Intra-view and cross-view patch similarity of a stereo dataset, measured
// with the Pearson correlation coefficient and histogram mutual information
// on BT.601 luma.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stereoqe/core/error.hpp"
#include "stereoqe/data/stereo_data.hpp"
#include "stereoqe/image/raster.hpp"

namespace stereoqe::correlation {

enum class LogBase { kTwo, kE };

inline LogBase log_base_from_string(const std::string& s) {
  if (s == "2") return LogBase::kTwo;
  if (s == "e") return LogBase::kE;
  throw ConfigError("log base must be '2' or 'e', got '" + s + "'");
}

inline std::string to_string(LogBase b) { return b == LogBase::kTwo ? "2" : "e"; }

// Pearson correlation; nullopt when either input has zero variance.
inline std::optional<double> pearson_cc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("pearson_cc: length mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  if (a.size() < 2) throw ValidationError("pearson_cc: need at least 2 samples");
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Values in [0, 256) mapped onto `bins` equal-width bins.
inline int bin_of(double v, int bins) {
  const int b = static_cast<int>(std::floor(v * bins / 256.0));
  return std::clamp(b, 0, bins - 1);
}

inline double log_in(double x, LogBase base) { return base == LogBase::kTwo ? std::log2(x) : std::log(x); }

inline double entropy(std::span<const double> a, int bins, LogBase base) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins, got " + std::to_string(bins));
  if (a.empty()) throw ValidationError("entropy of an empty sample");
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  for (double v : a) h[static_cast<std::size_t>(bin_of(v, bins))] += 1.0;
  const auto n = static_cast<double>(a.size());
  double e = 0.0;
  for (double c : h) {
    if (c > 0) e -= (c / n) * log_in(c / n, base);
  }
  return e;
}

// I(A; B) from the joint histogram of two equally sized samples.
inline double mutual_information(std::span<const double> a, std::span<const double> b, int bins,
                                 LogBase base) {
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins, got " + std::to_string(bins));
  if (a.size() != b.size()) {
    throw ValidationError("mutual_information: size mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  if (a.empty()) throw ValidationError("mutual_information of empty samples");
  const auto nb = static_cast<std::size_t>(bins);
  std::vector<double> joint(nb * nb, 0.0), ha(nb, 0.0), hb(nb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ia = static_cast<std::size_t>(bin_of(a[i], bins));
    const auto ib = static_cast<std::size_t>(bin_of(b[i], bins));
    joint[ia * nb + ib] += 1.0;
    ha[ia] += 1.0;
    hb[ib] += 1.0;
  }
  const auto n = static_cast<double>(a.size());
  double mi = 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    if (ha[i] == 0) continue;
    for (std::size_t j = 0; j < nb; ++j) {
      const double c = joint[i * nb + j];
      if (c == 0) continue;
      mi += (c / n) * log_in(c * n / (ha[i] * hb[j]), base);
    }
  }
  return std::max(mi, 0.0);
}

enum class PairingMode { kIntraView, kCrossView };

struct PatchLocator {
  int view = 0;  // 0 left, 1 right
  int row = 0;   // grid cell row
  int col = 0;   // grid cell column
};

// Deterministic pairing on the non-overlapping patch grid anchored at (0, 0).
// Intra-view: each cell with its right-hand neighbour, in both views.
// Cross-view: each left cell with the co-located right cell.
struct PatchPairing {
  int patch_size = 128;
  PairingMode mode = PairingMode::kCrossView;
  std::vector<std::pair<PatchLocator, PatchLocator>> pairs;
};

inline PatchPairing make_pairing(int height, int width, int patch_size, PairingMode mode) {
  if (patch_size < 2) throw ConfigError("patch size must be at least 2");
  if (patch_size > height || patch_size > width) {
    throw ValidationError("patch size " + std::to_string(patch_size) + " exceeds image " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  PatchPairing p{patch_size, mode, {}};
  const int rows = height / patch_size, cols = width / patch_size;
  if (mode == PairingMode::kCrossView) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) p.pairs.push_back({{0, r, c}, {1, r, c}});
    }
  } else {
    for (int v = 0; v < 2; ++v) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c + 1 < cols; ++c) p.pairs.push_back({{v, r, c}, {v, r, c + 1}});
      }
    }
  }
  return p;
}

inline std::vector<double> extract_patch(const std::vector<double>& plane, int width, int patch_size,
                                         int row, int col) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(patch_size) * patch_size);
  for (int y = 0; y < patch_size; ++y) {
    const auto* s = &plane[static_cast<std::size_t>(row * patch_size + y) * width + col * patch_size];
    out.insert(out.end(), s, s + patch_size);
  }
  return out;
}

struct CorrelationReport {
  double intra_cc = 0, intra_mi = 0, cross_cc = 0, cross_mi = 0;
  // Pairs contributing to the CC means; MI uses every pair.
  long n_pairs_intra = 0, n_pairs_cross = 0;
  long n_mi_intra = 0, n_mi_cross = 0;
  long skipped_intra = 0, skipped_cross = 0;  // zero-variance pairs
  int patch_size = 128;
  int bins = 256;
  LogBase log_base = LogBase::kTwo;

  friend bool operator==(const CorrelationReport&, const CorrelationReport&) = default;
};

namespace detail {

struct Accumulator {
  // Kahan-compensated running sums keep the mean independent of pair count.
  double cc_sum = 0, cc_c = 0, mi_sum = 0, mi_c = 0;
  long cc_n = 0, mi_n = 0, skipped = 0;

  static void add(double& sum, double& comp, double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

inline void accumulate_pairs(const std::vector<double> planes[2], int width, const PatchPairing& p,
                             int bins, LogBase base, Accumulator& acc) {
  for (const auto& [a, b] : p.pairs) {
    const auto pa = extract_patch(planes[a.view], width, p.patch_size, a.row, a.col);
    const auto pb = extract_patch(planes[b.view], width, p.patch_size, b.row, b.col);
    if (auto cc = pearson_cc(pa, pb)) {
      Accumulator::add(acc.cc_sum, acc.cc_c, *cc);
      ++acc.cc_n;
    } else {
      ++acc.skipped;
    }
    Accumulator::add(acc.mi_sum, acc.mi_c, mutual_information(pa, pb, bins, base));
    ++acc.mi_n;
  }
}

}  // namespace detail

// Accumulates one stereo pair into a running analysis.
class Analyzer {
 public:
  Analyzer(int patch_size, int bins, LogBase base) : patch_size_(patch_size), bins_(bins), base_(base) {
    if (bins < 2) throw ConfigError("histogram needs at least 2 bins, got " + std::to_string(bins));
    if (patch_size < 2) throw ConfigError("patch size must be at least 2");
  }

  void add(const Raster& left, const Raster& right) {
    require_same_dims(left, right, "correlation analysis");
    const std::vector<double> planes[2] = {luma(left), luma(right)};
    detail::accumulate_pairs(planes, left.width,
                             make_pairing(left.height, left.width, patch_size_, PairingMode::kIntraView),
                             bins_, base_, intra_);
    detail::accumulate_pairs(planes, left.width,
                             make_pairing(left.height, left.width, patch_size_, PairingMode::kCrossView),
                             bins_, base_, cross_);
  }

  CorrelationReport report() const {
    CorrelationReport r;
    r.patch_size = patch_size_;
    r.bins = bins_;
    r.log_base = base_;
    r.n_pairs_intra = intra_.cc_n;
    r.n_pairs_cross = cross_.cc_n;
    r.n_mi_intra = intra_.mi_n;
    r.n_mi_cross = cross_.mi_n;
    r.skipped_intra = intra_.skipped;
    r.skipped_cross = cross_.skipped;
    if (intra_.cc_n) r.intra_cc = intra_.cc_sum / static_cast<double>(intra_.cc_n);
    if (cross_.cc_n) r.cross_cc = cross_.cc_sum / static_cast<double>(cross_.cc_n);
    if (intra_.mi_n) r.intra_mi = intra_.mi_sum / static_cast<double>(intra_.mi_n);
    if (cross_.mi_n) r.cross_mi = cross_.mi_sum / static_cast<double>(cross_.mi_n);
    return r;
  }

 private:
  int patch_size_;
  int bins_;
  LogBase base_;
  detail::Accumulator intra_, cross_;
};

// Analyzes the raw images of every manifest entry in manifest order.
inline CorrelationReport analyze(const data::DatasetManifest& manifest, int patch_size, int bins,
                                 LogBase base = LogBase::kTwo) {
  if (manifest.entries.empty()) throw DatasetError("cannot analyze an empty manifest");
  Analyzer an(patch_size, bins, base);
  for (const auto& e : manifest.entries) {
    const auto pair = data::load_pair(e, std::nullopt);
    an.add(pair.left, pair.right);
  }
  return an.report();
}

inline std::string to_csv(const CorrelationReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "# patch_size=" << r.patch_size << " bins=" << r.bins << " log_base=" << to_string(r.log_base)
     << " skipped_intra=" << r.skipped_intra << " skipped_cross=" << r.skipped_cross << '\n';
  os << "mode,metric,mean,n_pairs\n";
  os << "intra_view,cc," << r.intra_cc << ',' << r.n_pairs_intra << '\n';
  os << "intra_view,mi," << r.intra_mi << ',' << r.n_mi_intra << '\n';
  os << "cross_view,cc," << r.cross_cc << ',' << r.n_pairs_cross << '\n';
  os << "cross_view,mi," << r.cross_mi << ',' << r.n_mi_cross << '\n';
  return os.str();
}

inline void write_csv(const CorrelationReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_csv(r);
}

}  // namespace stereoqe::correlation
