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

// Full-reference quality metrics, Left/Right/Avg aggregation per quality
// factor, and rate-distortion points.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/log.hpp"
#include "stereoqe/data/stereo_data.hpp"
#include "stereoqe/image/raster.hpp"
#include "stereoqe/nn/inference.hpp"
#include "stereoqe/nn/model.hpp"

namespace stereoqe::metrics {

// Reported for identical images instead of +inf.
inline constexpr double kPsnrCap = 100.0;

enum class Channels { kRgb, kLuma };

namespace detail {

inline std::vector<std::vector<double>> planes(const Raster& r, Channels mode) {
  if (mode == Channels::kLuma) return {luma(r)};
  std::vector<std::vector<double>> out(3, std::vector<double>(static_cast<std::size_t>(r.height) * r.width));
  for (std::size_t i = 0; i < out[0].size(); ++i) {
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)][i] = r.pixels[3 * i + static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace detail

// 10 log10(255^2 / MSE) over every sample of the selected channels.
inline double psnr(const Raster& a, const Raster& b, Channels mode = Channels::kRgb) {
  require_same_dims(a, b, "psnr");
  if (a.empty()) throw ValidationError("psnr of empty images");
  const auto pa = detail::planes(a, mode), pb = detail::planes(b, mode);
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < pa.size(); ++c) {
    for (std::size_t i = 0; i < pa[c].size(); ++i) {
      const double d = pa[c][i] - pb[c][i];
      sse += d * d;
    }
    n += pa[c].size();
  }
  if (sse == 0.0) return kPsnrCap;
  const double mse = sse / static_cast<double>(n);
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Mean SSIM over the window positions fully inside one plane.
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int H, int W,
                         const SsimParams& p = {}) {
  const int win = p.window;
  if (H < win || W < win) {
    throw ValidationError("ssim needs images of at least " + std::to_string(win) + "x" + std::to_string(win) +
                          ", got " + std::to_string(H) + "x" + std::to_string(W));
  }
  const auto k = gaussian_kernel(win, p.sigma);
  const int Ho = H - win + 1, Wo = W - win + 1;
  // Horizontal pass for the five moment images, then vertical.
  const std::size_t hsz = static_cast<std::size_t>(H) * Wo;
  std::vector<double> ha(hsz), hb(hsz), haa(hsz), hbb(hsz), hab(hsz);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win; ++i) {
        const double va = a[static_cast<std::size_t>(y) * W + x + i], vb = b[static_cast<std::size_t>(y) * W + x + i];
        const double w = k[static_cast<std::size_t>(i)];
        sa += w * va;
        sb += w * vb;
        saa += w * va * va;
        sbb += w * vb * vb;
        sab += w * va * vb;
      }
      const std::size_t o = static_cast<std::size_t>(y) * Wo + x;
      ha[o] = sa;
      hb[o] = sb;
      haa[o] = saa;
      hbb[o] = sbb;
      hab[o] = sab;
    }
  }
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double ma = 0, mb = 0, eaa = 0, ebb = 0, eab = 0;
      for (int i = 0; i < win; ++i) {
        const std::size_t o = static_cast<std::size_t>(y + i) * Wo + x;
        const double w = k[static_cast<std::size_t>(i)];
        ma += w * ha[o];
        mb += w * hb[o];
        eaa += w * haa[o];
        ebb += w * hbb[o];
        eab += w * hab[o];
      }
      const double va = eaa - ma * ma, vb = ebb - mb * mb, cov = eab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / (static_cast<double>(Ho) * Wo);
}

// Channel mean of per-plane SSIM (or luma SSIM).
inline double ssim(const Raster& a, const Raster& b, Channels mode = Channels::kRgb, const SsimParams& p = {}) {
  require_same_dims(a, b, "ssim");
  const auto pa = detail::planes(a, mode), pb = detail::planes(b, mode);
  double sum = 0.0;
  for (std::size_t c = 0; c < pa.size(); ++c) sum += ssim_plane(pa[c], pb[c], a.height, a.width, p);
  return sum / static_cast<double>(pa.size());
}

enum class View { kLeft, kRight, kAvg };

inline std::string to_string(View v) {
  switch (v) {
    case View::kLeft: return "left";
    case View::kRight: return "right";
    case View::kAvg: return "avg";
  }
  return "avg";
}

inline View view_from_string(const std::string& s) {
  if (s == "left") return View::kLeft;
  if (s == "right") return View::kRight;
  if (s == "avg") return View::kAvg;
  throw ValidationError("unknown view '" + s + "'");
}

struct MetricsRecord {
  std::string pair_id;
  View view = View::kLeft;
  int qf = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double bpp = 0.0;
  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr const char* kAggregateId = "_aggregate";

struct Aggregate {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double bpp = 0.0;
  int count = 0;
  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

struct MetricsTable {
  std::vector<MetricsRecord> rows;
  std::map<std::pair<View, int>, Aggregate> aggregates;  // (view, qf)

  std::vector<int> qfs() const {
    std::vector<int> out;
    for (const auto& [key, a] : aggregates) {
      if (key.first == View::kAvg) out.push_back(key.second);
    }
    return out;
  }

  const Aggregate& at(View v, int qf) const {
    auto it = aggregates.find({v, qf});
    if (it == aggregates.end()) throw ValidationError("no aggregate for " + to_string(v) + " qf " + std::to_string(qf));
    return it->second;
  }

  // Recomputes per-view means from rows; the avg row is the mean of the
  // left and right means.
  void aggregate() {
    aggregates.clear();
    for (const auto& r : rows) {
      auto& a = aggregates[{r.view, r.qf}];
      a.psnr_db += r.psnr_db;
      a.ssim += r.ssim;
      a.bpp += r.bpp;
      ++a.count;
    }
    std::vector<int> seen;
    for (auto& [key, a] : aggregates) {
      a.psnr_db /= a.count;
      a.ssim /= a.count;
      a.bpp /= a.count;
      seen.push_back(key.second);
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (int qf : seen) {
      auto l = aggregates.find({View::kLeft, qf});
      auto r = aggregates.find({View::kRight, qf});
      if (l == aggregates.end() || r == aggregates.end()) continue;
      aggregates[{View::kAvg, qf}] = {0.5 * (l->second.psnr_db + r->second.psnr_db),
                                      0.5 * (l->second.ssim + r->second.ssim),
                                      0.5 * (l->second.bpp + r->second.bpp), l->second.count + r->second.count};
    }
  }

  friend bool operator==(const MetricsTable&, const MetricsTable&) = default;
};

using Enhancer = std::function<std::pair<Raster, Raster>(const Raster& left, const Raster& right)>;

// Scores `enhance(compressed)` against the raw pair for every test pair and qf.
inline MetricsTable evaluate(const data::DatasetManifest& manifest, const std::vector<int>& qfs,
                             const Enhancer& enhance, Channels mode = Channels::kRgb) {
  const auto tests = manifest.in_split(data::Split::kTest);
  if (tests.empty()) throw DatasetError("manifest has no test pairs");
  if (qfs.empty()) throw ConfigError("no quality factors to evaluate");
  std::vector<int> sorted = qfs;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  MetricsTable t;
  for (const auto* e : tests) {
    const auto raw = data::load_pair(*e, std::nullopt);
    for (int qf : sorted) {
      const auto& c = e->at_qf(qf);
      const auto comp = data::load_pair(*e, qf);
      const auto [out_l, out_r] = enhance(comp.left, comp.right);
      t.rows.push_back({e->pair_id, View::kLeft, qf, psnr(out_l, raw.left, mode), ssim(out_l, raw.left, mode), c.bpp_left});
      t.rows.push_back({e->pair_id, View::kRight, qf, psnr(out_r, raw.right, mode), ssim(out_r, raw.right, mode),
                        c.bpp_right});
    }
  }
  t.aggregate();
  return t;
}

inline MetricsTable evaluate_model(const nn::ModelWeights<float>& weights, const data::DatasetManifest& manifest,
                                   const std::vector<int>& qfs, Channels mode = Channels::kRgb,
                                   const nn::InferenceOptions& opt = {}) {
  return evaluate(
      manifest, qfs, [&](const Raster& l, const Raster& r) { return nn::enhance(l, r, weights, opt); }, mode);
}

inline std::pair<Raster, Raster> identity_enhancer(const Raster& l, const Raster& r) { return {l, r}; }

struct RdPoint {
  int qf = 0;
  double bpp = 0.0;
  double psnr_db = 0.0;
  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

namespace detail {

inline std::vector<RdPoint> sorted_points(std::vector<RdPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const RdPoint& a, const RdPoint& b) {
    return a.bpp != b.bpp ? a.bpp < b.bpp : a.qf < b.qf;
  });
  if (pts.size() == 1) log::warn("rate-distortion curve has a single point");
  return pts;
}

}  // namespace detail

// One point per qf: (mean bpp of the compressed test inputs, avg PSNR).
inline std::vector<RdPoint> rd_points(const MetricsTable& table, const data::DatasetManifest& manifest) {
  const auto tests = manifest.in_split(data::Split::kTest);
  if (tests.empty()) throw DatasetError("manifest has no test pairs");
  std::vector<RdPoint> pts;
  for (int qf : table.qfs()) {
    double bpp = 0.0;
    for (const auto* e : tests) bpp += e->at_qf(qf).bpp();
    pts.push_back({qf, bpp / static_cast<double>(tests.size()), table.at(View::kAvg, qf).psnr_db});
  }
  return detail::sorted_points(std::move(pts));
}

// Same points from the aggregate rows alone (bpp taken from the table).
inline std::vector<RdPoint> rd_points(const MetricsTable& table) {
  std::vector<RdPoint> pts;
  for (int qf : table.qfs()) {
    const auto& a = table.at(View::kAvg, qf);
    pts.push_back({qf, a.bpp, a.psnr_db});
  }
  return detail::sorted_points(std::move(pts));
}

// ---- CSV ---------------------------------------------------------------------

inline std::string to_csv(const MetricsTable& t) {
  std::ostringstream os;
  os.precision(10);
  os << "pair_id,view,qf,psnr_db,ssim,bpp\n";
  for (const auto& r : t.rows) {
    os << r.pair_id << ',' << to_string(r.view) << ',' << r.qf << ',' << r.psnr_db << ',' << r.ssim << ',' << r.bpp
       << '\n';
  }
  for (View v : {View::kLeft, View::kRight, View::kAvg}) {
    for (const auto& [key, a] : t.aggregates) {
      if (key.first != v) continue;
      os << kAggregateId << ',' << to_string(v) << ',' << key.second << ',' << a.psnr_db << ',' << a.ssim << ','
         << a.bpp << '\n';
    }
  }
  return os.str();
}

inline void write_csv(const MetricsTable& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics " + path.string());
  out << to_csv(t);
}

// Parses a metrics CSV. Per-image rows become `rows`; aggregate rows are
// taken as written.
inline MetricsTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics " + path.string());
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("pair_id,view,qf,psnr_db,ssim,bpp", 0) != 0) {
    throw ValidationError(path.string() + " is not a metrics CSV");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
    if (f.size() != 6) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    try {
      MetricsRecord r{f[0], view_from_string(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
      if (r.pair_id == kAggregateId) {
        t.aggregates[{r.view, r.qf}] = {r.psnr_db, r.ssim, r.bpp, 0};
      } else {
        t.rows.push_back(std::move(r));
      }
    } catch (const std::logic_error&) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return t;
}

inline void write_rd_points(const std::vector<RdPoint>& pts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "# qf bpp psnr_db\n";
  for (const auto& p : pts) out << p.qf << ' ' << p.bpp << ' ' << p.psnr_db << '\n';
}

// Minimal SVG line plot of one RD curve.
inline void write_rd_svg(const std::vector<RdPoint>& pts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const double W = 480, H = 360, m = 48;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts.front().bpp;
    y0 = y1 = pts.front().psnr_db;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.bpp);
      x1 = std::max(x1, p.bpp);
      y0 = std::min(y0, p.psnr_db);
      y1 = std::max(y1, p.psnr_db);
    }
    if (x1 - x0 < 1e-9) { x0 -= 0.5; x1 += 0.5; }
    if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
  }
  auto px = [&](double v) { return m + (v - x0) / (x1 - x0) * (W - 2 * m); };
  auto py = [&](double v) { return H - m - (v - y0) / (y1 - y0) * (H - 2 * m); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << H - m << "\" x2=\"" << W - m << "\" y2=\"" << H - m << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << H - m << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">bpp</text>\n";
  out << "<text x=\"14\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << H / 2
      << ")\" text-anchor=\"middle\">PSNR (dB)</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#b5451b\" stroke-width=\"2\" points=\"";
  for (const auto& p : pts) out << px(p.bpp) << ',' << py(p.psnr_db) << ' ';
  out << "\"/>\n";
  for (const auto& p : pts) {
    out << "<circle cx=\"" << px(p.bpp) << "\" cy=\"" << py(p.psnr_db) << "\" r=\"3\" fill=\"#b5451b\"/>\n";
    out << "<text x=\"" << px(p.bpp) + 5 << "\" y=\"" << py(p.psnr_db) - 5 << "\" font-size=\"10\">QF " << p.qf
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace stereoqe::metrics
