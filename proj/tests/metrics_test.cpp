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

#include <gtest/gtest.h>

#include <cmath>

#include "stereoqe/core/rng.hpp"
#include "stereoqe/data/synthetic.hpp"
#include "stereoqe/image/png_io.hpp"
#include "stereoqe/metrics/metrics.hpp"
#include "test_util.hpp"

namespace stereoqe::metrics {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

Raster random_raster(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Raster r(h, w);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

Raster add_noise(const Raster& r, int amplitude, std::uint64_t seed) {
  Rng rng(seed);
  Raster out = r;
  for (auto& p : out.pixels) {
    const int d = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * amplitude + 1))) - amplitude;
    p = static_cast<std::uint8_t>(std::clamp(static_cast<int>(p) + d, 0, 255));
  }
  return out;
}

// Direct SSIM: every 11x11 window fully inside the image, Gaussian weights
// evaluated in 2D, averaged over windows then channels.
double reference_ssim(const Raster& a, const Raster& b) {
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double w[11][11], wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int y = 0; y + 11 <= a.height; ++y)
      for (int x = 0; x + 11 <= a.width; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            ma += w[i][j] / wsum * a.at(y + i, x + j, c);
            mb += w[i][j] / wsum * b.at(y + i, x + j, c);
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double da = a.at(y + i, x + j, c) - ma, db = b.at(y + i, x + j, c) - mb;
            va += w[i][j] / wsum * da * da;
            vb += w[i][j] / wsum * db * db;
            cov += w[i][j] / wsum * da * db;
          }
        s += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    total += s / ((a.height - 10) * (a.width - 10));
  }
  return total / 3;
}

TEST(Psnr, UniformOffsetOfOne) {
  Raster a(20, 30, 100), b(20, 30, 101);
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-6);
  EXPECT_NEAR(psnr(a, b, Channels::kLuma), 20.0 * std::log10(255.0), 1e-6);
}

TEST(Psnr, IdenticalImagesHitTheCap) {
  const auto a = random_raster(8, 8, 1);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
}

TEST(Psnr, SymmetricAndMonotoneInNoise) {
  const auto a = random_raster(32, 32, 2);
  const auto b = add_noise(a, 3, 3), c = add_noise(a, 12, 3);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  EXPECT_GT(psnr(a, b), psnr(a, c));
}

TEST(Psnr, RejectsMismatch) {
  EXPECT_THROW(psnr(Raster(4, 4), Raster(4, 5)), ValidationError);
  EXPECT_THROW(psnr(Raster(), Raster()), ValidationError);
}

TEST(Ssim, AgreesWithDirectComputation) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = random_raster(24 + static_cast<int>(s % 5), 30, 10 + s);
    const auto b = add_noise(a, 5 + static_cast<int>(s) * 4, 100 + s);
    EXPECT_NEAR(ssim(a, b), reference_ssim(a, b), 1e-6) << "pair " << s;
  }
}

TEST(Ssim, BoundsAndSymmetry) {
  const auto a = random_raster(20, 20, 4);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  const auto b = add_noise(a, 20, 5);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  EXPECT_LT(ssim(a, b), 1.0);
  EXPECT_GT(ssim(a, add_noise(a, 4, 6)), ssim(a, add_noise(a, 40, 6)));
}

TEST(Ssim, RejectsImagesSmallerThanTheWindow) {
  EXPECT_THROW(ssim(Raster(10, 40), Raster(10, 40)), ValidationError);
}

TEST(Table, AggregatesAverageViews) {
  MetricsTable t;
  t.rows = {{"a", View::kLeft, 30, 30, 0.8, 1.0}, {"a", View::kRight, 30, 32, 0.9, 1.2},
            {"b", View::kLeft, 30, 34, 0.7, 1.4}, {"b", View::kRight, 30, 36, 0.6, 1.6}};
  t.aggregate();
  EXPECT_DOUBLE_EQ(t.at(View::kLeft, 30).psnr_db, 32.0);
  EXPECT_DOUBLE_EQ(t.at(View::kRight, 30).psnr_db, 34.0);
  EXPECT_DOUBLE_EQ(t.at(View::kAvg, 30).psnr_db, 33.0);
  EXPECT_DOUBLE_EQ(t.at(View::kAvg, 30).bpp, 1.3);
  EXPECT_THROW(t.at(View::kAvg, 40), ValidationError);
}

TEST(Table, CsvRoundTrip) {
  TempDir tmp("metrics_csv");
  MetricsTable t;
  t.rows = {{"a", View::kLeft, 30, 30.25, 0.8, 1.0}, {"a", View::kRight, 30, 32.5, 0.9, 1.2},
            {"a", View::kLeft, 60, 35.0, 0.95, 2.0}, {"a", View::kRight, 60, 36.0, 0.96, 2.2}};
  t.aggregate();
  write_csv(t, tmp.path() / "m.csv");
  const auto back = read_csv(tmp.path() / "m.csv");
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.qfs(), (std::vector<int>{30, 60}));
  EXPECT_NEAR(back.at(View::kAvg, 60).psnr_db, 35.5, 1e-9);
  const auto csv = to_csv(t);
  EXPECT_EQ(csv.rfind("pair_id,view,qf,psnr_db,ssim,bpp\n", 0), 0u);
  EXPECT_NE(csv.find("_aggregate,avg,30,"), std::string::npos);
}

TEST(Table, MalformedCsv) {
  TempDir tmp("metrics_bad");
  std::ofstream(tmp.path() / "x.csv") << "pair_id,view,qf,psnr_db,ssim,bpp\na,left,30,oops,1,1\n";
  EXPECT_THROW(read_csv(tmp.path() / "x.csv"), ValidationError);
  std::ofstream(tmp.path() / "y.csv") << "hello\n";
  EXPECT_THROW(read_csv(tmp.path() / "y.csv"), ValidationError);
}

TEST(RdPoints, SortedByRate) {
  MetricsTable t;
  for (int qf : {60, 30, 50, 40}) {
    t.rows.push_back({"a", View::kLeft, qf, 25.0 + qf / 10.0, 0.9, qf / 20.0});
    t.rows.push_back({"a", View::kRight, qf, 25.0 + qf / 10.0, 0.9, qf / 20.0});
  }
  t.aggregate();
  const auto pts = rd_points(t);
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LT(pts[i - 1].bpp, pts[i].bpp);
  EXPECT_EQ(pts.front().qf, 30);
}

TEST(Evaluate, IdentityEnhancerReportsCompressionQuality) {
  TempDir tmp("evaluate");
  for (int i = 0; i < 3; ++i) {
    synthetic::SceneOptions o;
    o.height = 48;
    o.width = 64;
    o.seed = static_cast<std::uint64_t>(i + 1);
    const auto [l, r] = synthetic::render_pair(o);
    fs::create_directories(tmp.path() / "raw" / std::to_string(i));
    png::write(tmp.path() / "raw" / std::to_string(i) / "left.png", l);
    png::write(tmp.path() / "raw" / std::to_string(i) / "right.png", r);
  }
  const auto m = data::build_dataset(tmp.path() / "raw", tmp.path() / "ds", {30, 60}, 1, 1, 2);
  const auto t = evaluate(m, {60, 30}, identity_enhancer);
  EXPECT_EQ(t.rows.size(), 2u * 2u * 2u);
  for (const auto& r : t.rows) {
    const auto& e = m.entry(r.pair_id);
    const auto raw = data::load_pair(e, std::nullopt), comp = data::load_pair(e, r.qf);
    const auto& [ref, got] = r.view == View::kLeft ? std::pair{raw.left, comp.left} : std::pair{raw.right, comp.right};
    EXPECT_DOUBLE_EQ(r.psnr_db, psnr(got, ref));
    EXPECT_DOUBLE_EQ(r.bpp, r.view == View::kLeft ? e.at_qf(r.qf).bpp_left : e.at_qf(r.qf).bpp_right);
  }
  EXPECT_GT(t.at(View::kAvg, 60).psnr_db, t.at(View::kAvg, 30).psnr_db);
  const auto pts = rd_points(t, m);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts.front().qf, 30);
  EXPECT_THROW(evaluate(m, {40}, identity_enhancer), DatasetError);

  write_rd_points(pts, tmp.path() / "rd.txt");
  write_rd_svg(pts, tmp.path() / "rd.svg");
  EXPECT_GT(fs::file_size(tmp.path() / "rd.svg"), 100u);
}

}  // namespace
}  // namespace stereoqe::metrics
