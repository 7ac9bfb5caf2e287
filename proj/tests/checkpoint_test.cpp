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

#include <cstring>
#include <fstream>

#include "stereoqe/nn/checkpoint.hpp"
#include "stereoqe/train/training.hpp"
#include "test_util.hpp"

namespace stereoqe::nn {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

TEST(Archive, RoundTripIsBitExact) {
  TempDir tmp("ckpt");
  TensorArchive a;
  a.meta["note"] = "value with = sign";
  a.meta["empty"] = "";
  a.tensors["x"] = testing::random_tensor({2, 3, 4}, 1, -1e3, 1e3).cast<float>();
  a.tensors["scalar"] = Tensor<float>({1}, std::vector<float>{-0.0f});
  a.tensors["denormal"] = Tensor<float>({2}, std::vector<float>{1e-40f, std::numeric_limits<float>::infinity()});
  save_archive(a, tmp.path() / "a.bin");
  const auto b = load_archive(tmp.path() / "a.bin");
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (const auto& [k, t] : a.tensors) {
    const auto& u = b.tensors.at(k);
    ASSERT_EQ(u.shape(), t.shape());
    EXPECT_EQ(std::memcmp(u.data(), t.data(), t.size() * sizeof(float)), 0) << k;
  }
  EXPECT_FALSE(fs::exists(tmp.path() / "a.bin.tmp"));
}

// Writes the documented layout by hand, with a float64 tensor.
TEST(Archive, ReadsIndependentlyWrittenFloat64) {
  TempDir tmp("ckpt");
  const auto path = tmp.path() / "hand.bin";
  std::ofstream os(path, std::ios::binary);
  auto put = [&](auto v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
  os.write("SQECKPT", 8);
  put(std::uint32_t{1});
  const std::string meta = "k=v\n";
  put(std::uint64_t{meta.size()});
  os << meta;
  put(std::uint64_t{1});
  put(std::uint32_t{1});
  os << "w";
  put(std::uint32_t{2});
  put(std::int64_t{1});
  put(std::int64_t{2});
  put(std::uint8_t{1});
  put(1.25);
  put(-3.5);
  os.close();
  const auto a = load_archive(path);
  EXPECT_EQ(a.meta_at("k"), "v");
  const auto& w = a.tensors.at("w");
  EXPECT_EQ(w.shape(), (Shape{1, 2}));
  EXPECT_EQ(w[0], 1.25f);
  EXPECT_EQ(w[1], -3.5f);
}

TEST(Archive, RejectsCorruptFiles) {
  TempDir tmp("ckpt");
  EXPECT_THROW(load_archive(tmp.path() / "missing.bin"), IoError);

  std::ofstream(tmp.path() / "text.bin") << "not a checkpoint at all";
  EXPECT_THROW(load_archive(tmp.path() / "text.bin"), IoError);

  TensorArchive a;
  a.tensors["x"] = Tensor<float>({64});
  save_archive(a, tmp.path() / "good.bin");
  const auto size = fs::file_size(tmp.path() / "good.bin");
  fs::copy_file(tmp.path() / "good.bin", tmp.path() / "short.bin");
  fs::resize_file(tmp.path() / "short.bin", size - 10);
  EXPECT_THROW(load_archive(tmp.path() / "short.bin"), IoError);

  fs::copy_file(tmp.path() / "good.bin", tmp.path() / "version.bin");
  {
    std::fstream f(tmp.path() / "version.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  EXPECT_THROW(load_archive(tmp.path() / "version.bin"), IoError);

  TensorArchive bad;
  bad.meta["a\nb"] = "x";
  EXPECT_THROW(save_archive(bad, tmp.path() / "bad.bin"), ValidationError);
  EXPECT_THROW(save_archive(a, tmp.path() / "no_such_dir" / "x.bin"), IoError);
}

TEST(Weights, RoundTripPreservesEverything) {
  TempDir tmp("ckpt");
  for (const auto& v : {ModelVariant{'S', false}, ModelVariant{'L', true}}) {
    auto w = init_model<float>(v, 42);
    w.training_step = 17;
    save_weights(w, tmp.path() / "w.bin");
    const auto r = load_weights(tmp.path() / "w.bin");
    EXPECT_EQ(r, w);
  }
}

TEST(Weights, MissingTensorOrMetadataIsRejected) {
  TempDir tmp("ckpt");
  TensorArchive a;
  put_model(a, init_model<float>(ModelVariant{'S', false}, 1));
  auto missing = a;
  missing.tensors.erase(missing.tensors.begin());
  save_archive(missing, tmp.path() / "m.bin");
  EXPECT_THROW(load_weights(tmp.path() / "m.bin"), ValidationError);

  auto nometa = a;
  nometa.meta.erase("variant");
  save_archive(nometa, tmp.path() / "n.bin");
  EXPECT_THROW(load_weights(tmp.path() / "n.bin"), ValidationError);

  auto badnum = a;
  badnum.meta["channels"] = "three";
  save_archive(badnum, tmp.path() / "b.bin");
  EXPECT_THROW(load_weights(tmp.path() / "b.bin"), ValidationError);
}

TEST(TrainingCheckpoint, WeightsFileLoadsFromTrainingCheckpoint) {
  TempDir tmp("ckpt");
  train::Checkpoint ck;
  ck.config.variant = "S";
  ck.weights = init_model<float>(ModelVariant{'S', false}, 5);
  ck.optimizer = train::AdamState::zeros_like(ck.weights);
  ck.epoch = 2;
  ck.global_step = 9;
  ck.loss_history = {0.5, 0.25};
  train::save_checkpoint(ck, tmp.path() / "c.bin");
  EXPECT_EQ(train::load_checkpoint(tmp.path() / "c.bin"), ck);
  EXPECT_EQ(load_weights(tmp.path() / "c.bin"), ck.weights);
}

}  // namespace
}  // namespace stereoqe::nn
