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

#include "stereoqe/nn/model.hpp"
#include "test_util.hpp"

namespace stereoqe {
namespace {

using testing::gradient_error;
using testing::random_tensor;
using testing::tiny_arch;

std::map<std::string, Tensor<double>> weights_under(const nn::ArchitectureConfig& a, const std::string& prefix,
                                                    std::uint64_t seed = 5) {
  std::map<std::string, Tensor<double>> out;
  for (auto& [k, v] : nn::init_model<double>(a, seed).params) {
    if (k.rfind(prefix, 0) == 0) out.emplace(k, v);
  }
  return out;
}

template <typename F>
void expect_gradients(F f, const std::map<std::string, Tensor<double>>& in) {
  EXPECT_LT(gradient_error<double>(f, in, 12), 1e-5);
  EXPECT_LT(gradient_error<float>(f, in, 12), 1e-3);
}

TEST(ModuleGradients, PatchAttentionModule) {
  const auto a = tiny_arch();
  auto in = weights_under(a, "patch1.");
  in.emplace("x", random_tensor({2, 4, 8, 16}, 1));
  expect_gradients([&](const auto& s) {
    return nn::patch_attention_module_stacked(s.vars().at("x"), nn::Scope(s).sub("patch1"), a);
  }, in);
}

TEST(ModuleGradients, PixelAttentionModule) {
  const auto a = tiny_arch();
  auto in = weights_under(a, "pixel.");
  in.emplace("x", random_tensor({2, 4, 5, 6}, 2));
  expect_gradients([&](const auto& s) {
    return nn::pixel_attention_module_stacked(s.vars().at("x"), nn::Scope(s).sub("pixel"), a);
  }, in);
}

TEST(ModuleGradients, ChannelAttention) {
  const auto a = tiny_arch();
  auto in = weights_under(a, "fuse.ca.");
  in.emplace("x", random_tensor({2, 8, 4, 4}, 3));
  expect_gradients([&](const auto& s) { return nn::channel_attention(s.vars().at("x"), nn::Scope(s).sub("fuse.ca")); }, in);
}

TEST(ModuleGradients, ResidualDenseBlock) {
  const auto a = tiny_arch();
  auto in = weights_under(a, "mid.rdb0.");
  in.emplace("x", random_tensor({1, 4, 6, 5}, 4));
  expect_gradients([&](const auto& s) {
    return nn::residual_dense_block(s.vars().at("x"), nn::Scope(s).sub("mid.rdb0"), a);
  }, in);
}

TEST(ModuleGradients, FuseAndGate) {
  const auto a = tiny_arch();
  auto in = weights_under(a, "fuse.");
  in.emplace("f", random_tensor({2, 4, 5, 5}, 5));
  in.emplace("g", random_tensor({2, 4, 5, 5}, 6));
  expect_gradients([&](const auto& s) {
    return nn::fuse_and_gate(s.vars().at("f"), s.vars().at("g"), nn::Scope(s).sub("fuse"));
  }, in);
}

TEST(ModuleGradients, FullForwardTiny) {
  auto a = tiny_arch(4);
  a.patch_size = 16;
  auto in = weights_under(a, "");
  in.emplace("input.left", random_tensor({1, 3, 16, 16}, 7, 0.0, 1.0));
  in.emplace("input.right", random_tensor({1, 3, 16, 16}, 8, 0.0, 1.0));
  auto f = [&](const auto& s) {
    const auto [l, r] = nn::forward(s.vars().at("input.left"), s.vars().at("input.right"), nn::Scope(s), a);
    return ops::concat_batch(l, r);
  };
  EXPECT_LT(gradient_error<double>(f, in, 4), 1e-5);
  EXPECT_LT(gradient_error<float>(f, in, 4), 1e-3);
}

TEST(Modules, ChannelAttentionWithZeroWeightsHalvesInput) {
  const auto a = tiny_arch();
  auto w = nn::init_model<double>(a, 1);
  for (auto& [k, t] : w.params) {
    if (k.rfind("fuse.ca.", 0) == 0) t.fill(0.0);
  }
  const nn::ParamSet<double> set(w, false);
  const auto x = random_tensor({2, 8, 3, 3}, 9);
  const auto y = nn::channel_attention(Var<double>(x), nn::Scope<double>(set).sub("fuse.ca")).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.5 * x[i]);
}

TEST(Modules, ResidualDenseBlockParameterCount) {
  for (auto [c, g, d] : {std::tuple{32, 32, 7}, std::tuple{4, 4, 2}, std::tuple{64, 16, 4}}) {
    nn::ArchitectureConfig a;
    a.channels = c;
    a.rdb_growth = g;
    a.rdb_layers = d;
    a.ca_reduction = 2;
    std::int64_t counted = 0;
    for (const auto& s : nn::architecture(a)) {
      if (s.name.rfind("head.rdb.", 0) == 0) counted += shape_numel(s.shape);
    }
    // D 3x3 layers with growing input, then a 1x1 fusion back to C.
    const std::int64_t expected = 9 * g * (std::int64_t{d} * c + std::int64_t{g} * d * (d - 1) / 2) + std::int64_t{d} * g +
                                  (std::int64_t{c} + std::int64_t{d} * g) * c + c;
    EXPECT_EQ(counted, expected);
  }
}

TEST(Modules, ResidualDenseBlockPreservesShape) {
  const auto a = tiny_arch();
  const auto w = nn::init_model<double>(a, 1);
  const nn::ParamSet<double> set(w, false);
  const Var<double> x(random_tensor({3, 4, 7, 11}, 10));
  EXPECT_EQ(nn::residual_dense_block(x, nn::Scope<double>(set).sub("tail.rdb"), a).shape(), x.shape());
}

TEST(Model, ParameterCountsPerVariant) {
  const auto s = nn::count_params(nn::ArchitectureConfig::for_variant({'S', false}));
  const auto m = nn::count_params(nn::ArchitectureConfig::for_variant({'M', false}));
  const auto l = nn::count_params(nn::ArchitectureConfig::for_variant({'L', false}));
  const auto la = nn::count_params(nn::ArchitectureConfig::for_variant({'L', true}));
  EXPECT_NEAR(static_cast<double>(s), 1.00e6, 0.2 * 1.00e6);
  EXPECT_NEAR(static_cast<double>(m), 1.32e6, 0.2 * 1.32e6);
  EXPECT_NEAR(static_cast<double>(l), 1.69e6, 0.2 * 1.69e6);
  EXPECT_LT(s, m);
  EXPECT_LT(m, l);
  EXPECT_LT(la, l);
  EXPECT_EQ(nn::count_params(nn::init_model<float>(nn::ModelVariant{'S', false}, 0)), s);
}

TEST(Model, InitIsDeterministicPerTensor) {
  const auto a = tiny_arch();
  EXPECT_EQ(nn::init_model<float>(a, 4), nn::init_model<float>(a, 4));
  EXPECT_NE(nn::init_model<float>(a, 4), nn::init_model<float>(a, 5));
  auto ablated = a;
  ablated.ablate_attention = true;
  const auto full = nn::init_model<float>(a, 4), abl = nn::init_model<float>(ablated, 4);
  for (const auto& [k, v] : abl.params) EXPECT_EQ(v, full.at(k)) << k;
  const auto bound = 1.0 / std::sqrt(3.0 * 9.0);
  for (float v : full.at("head.conv.weight").storage()) EXPECT_LE(std::abs(v), bound);
}

TEST(Model, VariantNamesAndValidation) {
  EXPECT_EQ(nn::ModelVariant::from_name("M").channels(), 48);
  EXPECT_THROW(nn::ModelVariant::from_name("XL"), ConfigError);
  auto a = tiny_arch();
  a.ca_reduction = 3;
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(nn::init_model<float>(a, 0).validate(), ConfigError);
}

TEST(Model, ValidateDetectsMissingOrMisshapedWeights) {
  auto w = nn::init_model<float>(tiny_arch(), 0);
  EXPECT_NO_THROW(w.validate());
  auto bad = w;
  bad.params.at("tail.conv.bias") = Tensor<float>({4});
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = w;
  bad.params.erase("mid.conv.weight");
  EXPECT_THROW(bad.validate(), ValidationError);
}

class ForwardShapes : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(ForwardShapes, OutputMatchesInput) {
  const auto [h, w] = GetParam();
  auto a = tiny_arch();
  a.patch_size = 16;
  const auto weights = nn::init_model<float>(a, 2);
  const nn::ParamSet<float> set(weights, false);
  NoGradGuard guard;
  const Var<float> l(random_tensor({1, 3, h, w}, 1, 0, 1).cast<float>()), r(random_tensor({1, 3, h, w}, 2, 0, 1).cast<float>());
  const auto [ol, orr] = nn::forward(l, r, nn::Scope<float>(set), a);
  EXPECT_EQ(ol.shape(), l.shape());
  EXPECT_EQ(orr.shape(), r.shape());
  EXPECT_TRUE(ol.value().all_finite());
}

INSTANTIATE_TEST_SUITE_P(Sizes, ForwardShapes,
                         ::testing::Values(std::pair{16, 16}, std::pair{48, 80}, std::pair{100, 100}, std::pair{17, 33},
                                           std::pair{5, 7}));

TEST(Model, ForwardIsViewSwapEquivariant) {
  auto a = tiny_arch();
  a.patch_size = 16;
  const auto w = nn::init_model<float>(a, 3);
  const nn::ParamSet<float> set(w, false);
  const Var<float> l(random_tensor({2, 3, 32, 48}, 1, 0, 1).cast<float>()), r(random_tensor({2, 3, 32, 48}, 2, 0, 1).cast<float>());
  const auto [a1, b1] = nn::forward(l, r, nn::Scope<float>(set), a);
  const auto [b2, a2] = nn::forward(r, l, nn::Scope<float>(set), a);
  EXPECT_LT(max_abs_diff(a1.value(), a2.value()), 1e-6f);
  EXPECT_LT(max_abs_diff(b1.value(), b2.value()), 1e-6f);
}

TEST(Model, AblatedForwardRuns) {
  auto a = tiny_arch();
  a.patch_size = 16;
  a.ablate_attention = true;
  const auto w = nn::init_model<float>(a, 3);
  EXPECT_EQ(w.params.count("patch1.cross.q.weight"), 0u);
  const nn::ParamSet<float> set(w, false);
  const Var<float> l(random_tensor({1, 3, 16, 32}, 1, 0, 1).cast<float>());
  const auto [o, p] = nn::forward(l, l, nn::Scope<float>(set), a);
  EXPECT_EQ(o.shape(), l.shape());
  EXPECT_LT(max_abs_diff(o.value(), p.value()), 1e-6f);
}

TEST(Model, ForwardRejectsMismatchedViews) {
  const auto a = tiny_arch();
  const auto w = nn::init_model<float>(a, 3);
  const nn::ParamSet<float> set(w, false);
  const Var<float> l(Tensor<float>({1, 3, 16, 16})), r(Tensor<float>({1, 3, 16, 32}));
  try {
    nn::forward(l, r, nn::Scope<float>(set), a);
    FAIL() << "expected a ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1, 3, 16, 16)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(1, 3, 16, 32)"), std::string::npos) << msg;
  }
}

}  // namespace
}  // namespace stereoqe
