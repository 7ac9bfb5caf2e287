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
#include <limits>

#include "stereoqe/data/synthetic.hpp"
#include "stereoqe/image/png_io.hpp"
#include "stereoqe/train/training.hpp"
#include "test_util.hpp"

namespace stereoqe::train {
namespace {

using testing::TempDir;

TEST(LrSchedule, StepDecay) {
  const TrainConfig c;
  EXPECT_EQ(lr_schedule(0, c), 1e-3);
  EXPECT_EQ(lr_schedule(1, c), 1e-3);
  EXPECT_EQ(lr_schedule(2, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(3, c), 9e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(5, c), 9e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(6, c), 8.1e-4);
  EXPECT_THROW(lr_schedule(-1, c), ValidationError);
}

TEST(LrSchedule, NonIncreasingAndPiecewiseConstant) {
  TrainConfig c;
  c.decay_every_epochs = 4;
  c.lr_decay = 0.5;
  for (int e = 1; e < 40; ++e) {
    EXPECT_LE(lr_schedule(e, c), lr_schedule(e - 1, c));
    if (e % 4 != 0) {
      EXPECT_EQ(lr_schedule(e, c), lr_schedule(e - 1, c));
    }
  }
}

TEST(L1PairLoss, Values) {
  const auto a = testing::random_tensor({2, 3, 4, 5}, 1, 0, 1), b = testing::random_tensor({2, 3, 4, 5}, 2, 0, 1);
  EXPECT_EQ(l1_pair_loss(a, b, a, b), 0.0);
  Tensor<double> shifted = a;
  for (auto& v : shifted.storage()) v += 0.5;
  EXPECT_NEAR(l1_pair_loss(shifted, b, a, b), 0.5, 1e-9);
  const auto c = testing::random_tensor({2, 3, 4, 5}, 3, 0, 1);
  EXPECT_DOUBLE_EQ(l1_pair_loss(a, c, b, b), l1_pair_loss(c, a, b, b));
  EXPECT_GT(l1_pair_loss(a, c, b, b), 0.0);
  EXPECT_THROW(l1_pair_loss(a, Tensor<double>({1, 3, 4, 5}), a, b), ValidationError);
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  auto w = nn::init_model<float>(nn::ModelVariant{'S', false}, 1);
  const auto before = w;
  auto s = AdamState::zeros_like(w);
  std::map<std::string, Tensor<float>> g;
  for (const auto& [k, t] : w.params) g.emplace(k, Tensor<float>(t.shape()));
  adam_update(w, s, g, 1e-3, TrainConfig{});
  EXPECT_EQ(w.params, before.params);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::ModelWeights<float> w;
  w.params.emplace("p", Tensor<float>({3}, std::vector<float>{1.0f, -2.0f, 0.5f}));
  auto s = AdamState::zeros_like(w);
  const std::map<std::string, Tensor<float>> g{{"p", Tensor<float>({3}, std::vector<float>{0.3f, -4.0f, 0.0f})}};
  adam_update(w, s, g, 0.01, TrainConfig{});
  // Bias-corrected moments equal g and g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(w.params.at("p")[0], 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(w.params.at("p")[1], -2.0f + 0.01f, 1e-6);
  EXPECT_EQ(w.params.at("p")[2], 0.5f);
}

void write_pairs(const fs::path& raw, int n) {
  for (int i = 0; i < n; ++i) {
    synthetic::SceneOptions o;
    o.height = 32;
    o.width = 48;
    o.seed = static_cast<std::uint64_t>(i + 1);
    const auto [l, r] = synthetic::render_pair(o);
    fs::create_directories(raw / ("p" + std::to_string(i)));
    png::write(raw / ("p" + std::to_string(i)) / "left.png", l);
    png::write(raw / ("p" + std::to_string(i)) / "right.png", r);
  }
}

class Loop : public ::testing::Test {
 protected:
  void SetUp() override {
    write_pairs(tmp_.path() / "raw", 3);
    manifest_ = data::build_dataset(tmp_.path() / "raw", tmp_.path() / "ds", {30, 60}, 1, 2, 1);
    config_.variant = "S";
    config_.batch_size = 2;
    config_.crop_size = 16;
    config_.qf_set = {30, 60};
    config_.seed = 11;
    config_.max_epochs = 2;
  }
  TempDir tmp_{"train"};
  data::DatasetManifest manifest_;
  TrainConfig config_;
};

TEST_F(Loop, EpochCropsAreSeeded) {
  const auto a = epoch_crops(manifest_, config_, 3), b = epoch_crops(manifest_, config_, 3);
  ASSERT_EQ(a.size(), 2u * 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].origin, b[i].origin);
    EXPECT_EQ(a[i].pair_id, b[i].pair_id);
    EXPECT_EQ(a[i].qf, b[i].qf);
  }
  bool differs = false;
  const auto c = epoch_crops(manifest_, config_, 4);
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || !(a[i].origin == c[i].origin) || a[i].pair_id != c[i].pair_id;
  EXPECT_TRUE(differs);
}

TEST_F(Loop, TrainStepZeroLrAndDeterminism) {
  const auto crops = epoch_crops(manifest_, config_, 0);
  auto w = nn::init_model<float>(config_.architecture(), 3);
  const auto w0 = w;
  auto s = AdamState::zeros_like(w);
  const auto r = train_step(crops, w, s, 0.0, config_);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_EQ(w.params, w0.params);

  auto w1 = w0, w2 = w0;
  auto s1 = AdamState::zeros_like(w0), s2 = s1;
  const auto r1 = train_step(crops, w1, s1, 1e-3, config_);
  const auto r2 = train_step(crops, w2, s2, 1e-3, config_);
  EXPECT_EQ(r1.loss, r2.loss);
  EXPECT_EQ(w1, w2);
  EXPECT_EQ(s1, s2);
  EXPECT_NE(w1.params, w0.params);
}

TEST_F(Loop, NonFiniteLossRaisesTrainingError) {
  const auto crops = epoch_crops(manifest_, config_, 0);
  auto w = nn::init_model<float>(config_.architecture(), 3);
  w.params.at("tail.conv.bias")[0] = std::numeric_limits<float>::quiet_NaN();
  auto s = AdamState::zeros_like(w);
  try {
    train_step(crops, w, s, 1e-3, config_);
    FAIL() << "expected a TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
    EXPECT_EQ(e.exit_code(), ExitCode::kDivergence);
  }
}

TEST_F(Loop, ZeroEpochsReturnsInitialWeights) {
  config_.max_epochs = 0;
  const auto ck = train_loop(manifest_, config_);
  EXPECT_EQ(ck.weights, nn::init_model<float>(config_.architecture(), config_.seed));
  EXPECT_EQ(ck.global_step, 0u);
  EXPECT_TRUE(ck.loss_history.empty());
}

TEST_F(Loop, ResumeIsBitIdentical) {
  config_.max_epochs = 3;
  const auto full = train_loop(manifest_, config_, {tmp_.path() / "full", {}, {}});
  ASSERT_EQ(full.loss_history.size(), 3u);
  EXPECT_EQ(full.global_step, 3u * 2u);

  const auto at1 = load_checkpoint(tmp_.path() / "full" / "epoch_1.sqeckpt");
  EXPECT_EQ(at1.epoch, 1);
  const auto resumed = train_loop(manifest_, config_, {tmp_.path() / "resumed", at1, {}});
  EXPECT_EQ(resumed.weights, full.weights);
  EXPECT_EQ(resumed.optimizer, full.optimizer);
  EXPECT_EQ(resumed.loss_history, full.loss_history);
  EXPECT_EQ(resumed.global_step, full.global_step);

  // Checkpoints, best-loss retention and the CSV log.
  EXPECT_TRUE(fs::exists(tmp_.path() / "full" / "best.sqeckpt"));
  EXPECT_EQ(load_checkpoint(tmp_.path() / "full" / "last.sqeckpt"), full);
  std::ifstream log(tmp_.path() / "full" / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch,step,lr,loss");
  int rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST_F(Loop, ResumeRejectsOtherArchitecture) {
  config_.max_epochs = 0;
  auto ck = train_loop(manifest_, config_);
  ck.weights = nn::init_model<float>(nn::ModelVariant{'M', false}, 0);
  config_.max_epochs = 1;
  EXPECT_THROW(train_loop(manifest_, config_, {{}, ck, {}}), ValidationError);
}

TEST_F(Loop, MissingQualityFactorIsADatasetError) {
  config_.qf_set = {40};
  EXPECT_THROW(train_loop(manifest_, config_), DatasetError);
}

TEST(Config, RoundTripAndErrors) {
  TrainConfig c;
  c.variant = "M";
  c.qf_set = {30, 50};
  c.lr_initial = 2.5e-4;
  c.augment_flip = true;
  std::istringstream in(format_config(c));
  EXPECT_EQ(parse_config(in), c);

  std::istringstream comments("# comment\n\nbatch_size = 2 # trailing\nseed=9\n");
  const auto p = parse_config(comments);
  EXPECT_EQ(p.batch_size, 2);
  EXPECT_EQ(p.seed, 9u);

  std::istringstream unknown("learning_rate = 1\n");
  EXPECT_THROW(parse_config(unknown), ConfigError);
  std::istringstream bad("batch_size = many\n");
  EXPECT_THROW(parse_config(bad), ConfigError);
  std::istringstream noeq("batch_size 4\n");
  EXPECT_THROW(parse_config(noeq), ConfigError);
}

TEST(Config, Validation) {
  auto expect_invalid = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  expect_invalid([](TrainConfig& c) { c.batch_size = 0; });
  expect_invalid([](TrainConfig& c) { c.lr_decay = 0.0; });
  expect_invalid([](TrainConfig& c) { c.lr_decay = 1.5; });
  expect_invalid([](TrainConfig& c) { c.beta1 = 1.0; });
  expect_invalid([](TrainConfig& c) { c.beta2 = 0.0; });
  expect_invalid([](TrainConfig& c) { c.crop_size = 24; });
  expect_invalid([](TrainConfig& c) { c.qf_set = {}; });
  expect_invalid([](TrainConfig& c) { c.variant = "XL"; });
  expect_invalid([](TrainConfig& c) { c.max_epochs = -1; });
}

}  // namespace
}  // namespace stereoqe::train
