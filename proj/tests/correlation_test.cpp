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
#include <numbers>

#include "stereoqe/correlation/correlation.hpp"
#include "stereoqe/core/rng.hpp"

namespace stereoqe::correlation {
namespace {

std::vector<double> uniform_sample(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(0.0, 255.0);
  return v;
}

TEST(Pearson, SelfAndAntiCorrelation) {
  const auto x = uniform_sample(1000, 1);
  std::vector<double> neg(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = 255.0 - x[i];
  EXPECT_NEAR(*pearson_cc(x, x), 1.0, 1e-12);
  EXPECT_NEAR(*pearson_cc(x, neg), -1.0, 1e-12);
}

TEST(Pearson, IndependentNoiseIsNearZero) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = uniform_sample(16384, 100 + s), b = uniform_sample(16384, 200 + s);
    EXPECT_LT(std::abs(*pearson_cc(a, b)), 0.1);
  }
}

TEST(Pearson, SymmetricAndAffineInvariant) {
  const auto a = uniform_sample(500, 3);
  auto b = uniform_sample(500, 4);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.5 * b[i] + 0.5 * a[i];
  std::vector<double> a2(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) a2[i] = 0.3 * a[i] + 17.0;
  const double cc = *pearson_cc(a, b);
  EXPECT_NEAR(cc, *pearson_cc(b, a), 1e-12);
  EXPECT_NEAR(cc, *pearson_cc(a2, b), 1e-12);
  EXPECT_GT(cc, 0.5);
}

TEST(Pearson, ZeroVarianceIsUndefined) {
  const std::vector<double> flat(64, 10.0);
  const auto x = uniform_sample(64, 5);
  EXPECT_FALSE(pearson_cc(flat, x).has_value());
  EXPECT_FALSE(pearson_cc(x, flat).has_value());
  EXPECT_THROW(pearson_cc(x, std::vector<double>(3, 1.0)), ValidationError);
}

TEST(MutualInformation, TwoEquiprobableValuesCarryOneBit) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2) ? 200.0 : 10.0;
  EXPECT_NEAR(mutual_information(x, x, 256, LogBase::kTwo), 1.0, 1e-12);
  EXPECT_NEAR(mutual_information(x, x, 256, LogBase::kE), std::numbers::ln2, 1e-12);
  EXPECT_NEAR(entropy(x, 256, LogBase::kTwo), 1.0, 1e-12);
}

TEST(MutualInformation, ConstantSignalCarriesNothing) {
  const std::vector<double> flat(256, 42.0);
  const auto x = uniform_sample(256, 6);
  EXPECT_EQ(mutual_information(flat, x, 64, LogBase::kTwo), 0.0);
  EXPECT_EQ(mutual_information(flat, flat, 64, LogBase::kTwo), 0.0);
}

TEST(MutualInformation, SelfInformationIsEntropy) {
  const auto x = uniform_sample(4096, 7);
  for (int bins : {2, 16, 256}) {
    EXPECT_NEAR(mutual_information(x, x, bins, LogBase::kTwo), entropy(x, bins, LogBase::kTwo), 1e-9);
  }
}

TEST(MutualInformation, ShuffledPairingIsNearZero) {
  const auto x = uniform_sample(100000, 8);
  auto y = x;
  Rng rng(9);
  rng.shuffle(y);
  // Plug-in bias is about (bins - 1)^2 / (2 n ln 2) bits.
  EXPECT_LT(mutual_information(x, y, 8, LogBase::kTwo), 2e-3);
  EXPECT_GT(mutual_information(x, x, 8, LogBase::kTwo), 2.9);
}

TEST(MutualInformation, SymmetricAndNonNegative) {
  const auto a = uniform_sample(2000, 10);
  auto b = uniform_sample(2000, 11);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::fmod(a[i] * 0.7 + b[i] * 0.3, 256.0);
  const double ab = mutual_information(a, b, 32, LogBase::kTwo);
  EXPECT_NEAR(ab, mutual_information(b, a, 32, LogBase::kTwo), 1e-12);
  EXPECT_GE(ab, 0.0);
  EXPECT_LE(ab, entropy(a, 32, LogBase::kTwo) + 1e-12);
}

TEST(MutualInformation, RejectsBadArguments) {
  const auto x = uniform_sample(10, 12);
  EXPECT_THROW(mutual_information(x, x, 1, LogBase::kTwo), ConfigError);
  EXPECT_THROW(mutual_information(x, uniform_sample(9, 13), 8, LogBase::kTwo), ValidationError);
  EXPECT_THROW(log_base_from_string("10"), ConfigError);
}

TEST(Pairing, GridCounts) {
  const auto cross = make_pairing(300, 520, 128, PairingMode::kCrossView);
  EXPECT_EQ(cross.pairs.size(), 2u * 4u);
  const auto intra = make_pairing(300, 520, 128, PairingMode::kIntraView);
  EXPECT_EQ(intra.pairs.size(), 2u * 2u * 3u);
  for (const auto& [a, b] : intra.pairs) {
    EXPECT_EQ(a.view, b.view);
    EXPECT_EQ(a.row, b.row);
    EXPECT_EQ(b.col, a.col + 1);
  }
  for (const auto& [a, b] : cross.pairs) {
    EXPECT_EQ(a.view, 0);
    EXPECT_EQ(b.view, 1);
    EXPECT_EQ(a.row, b.row);
    EXPECT_EQ(a.col, b.col);
  }
  EXPECT_THROW(make_pairing(100, 100, 128, PairingMode::kCrossView), ValidationError);
}

Raster noise_raster(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Raster r(h, w);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

TEST(Analyzer, IdenticalViewsCorrelatePerfectly) {
  const auto img = noise_raster(64, 96, 14);
  Analyzer an(32, 64, LogBase::kTwo);
  an.add(img, img);
  const auto r = an.report();
  EXPECT_NEAR(r.cross_cc, 1.0, 1e-12);
  EXPECT_EQ(r.n_pairs_cross, 2 * 3);
  EXPECT_EQ(r.n_pairs_intra, 2 * 2 * 2);
  EXPECT_LT(std::abs(r.intra_cc), 0.1);  // independent noise in neighbouring cells
  EXPECT_GT(r.cross_mi, r.intra_mi);
}

TEST(Analyzer, FlatImagesAreSkippedForCorrelation) {
  const Raster flat(64, 64, 90);
  Analyzer an(32, 16, LogBase::kTwo);
  an.add(flat, flat);
  const auto r = an.report();
  EXPECT_EQ(r.n_pairs_cross, 0);
  EXPECT_EQ(r.skipped_cross, 4);
  EXPECT_EQ(r.n_mi_cross, 4);
  EXPECT_EQ(r.cross_mi, 0.0);
}

TEST(Report, CsvLayout) {
  CorrelationReport r;
  r.cross_cc = 0.5;
  r.n_pairs_cross = 3;
  const auto csv = to_csv(r);
  EXPECT_EQ(csv.rfind("# patch_size=128 bins=256 log_base=2", 0), 0u) << csv;
  EXPECT_NE(csv.find("mode,metric,mean,n_pairs\n"), std::string::npos);
  EXPECT_NE(csv.find("cross_view,cc,0.5,3\n"), std::string::npos);
}

}  // namespace
}  // namespace stereoqe::correlation
