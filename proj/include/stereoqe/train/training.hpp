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

// L1 training of the stereo enhancement network with Adam and a step-decay
// learning-rate schedule, plus resumable checkpoints.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stereoqe/core/autograd.hpp"
#include "stereoqe/core/error.hpp"
#include "stereoqe/core/ops.hpp"
#include "stereoqe/core/rng.hpp"
#include "stereoqe/data/stereo_data.hpp"
#include "stereoqe/nn/checkpoint.hpp"
#include "stereoqe/nn/model.hpp"

namespace stereoqe::train {

namespace fs = std::filesystem;

struct TrainConfig {
  std::string variant = "L";
  bool ablate_attention = false;
  std::string softmax_scale = "none";
  int batch_size = 4;
  double lr_initial = 1e-3;
  double lr_decay = 0.9;
  int decay_every_epochs = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  int max_epochs = 60;
  std::vector<int> qf_set = {30, 40, 50, 60};
  int crop_size = 128;
  std::uint64_t seed = 0;
  bool augment_flip = false;

  void validate() const {
    nn::ModelVariant::from_name(variant, ablate_attention);
    nn::softmax_scale_from_string(softmax_scale);
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_initial >= 0.0)) throw ConfigError("lr_initial must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (decay_every_epochs < 1) throw ConfigError("decay_every_epochs must be >= 1");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (qf_set.empty()) throw ConfigError("qf_set must not be empty");
    for (int qf : qf_set) data::CompressionSettings{qf}.validate();
    if (crop_size < 16 || crop_size % 16 != 0) throw ConfigError("crop_size must be a positive multiple of 16");
  }

  nn::ArchitectureConfig architecture() const {
    auto a = nn::ArchitectureConfig::for_variant(nn::ModelVariant::from_name(variant, ablate_attention));
    a.softmax_scale = nn::softmax_scale_from_string(softmax_scale);
    return a;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = detail::trim(item);
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("not an integer: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// Key/value form of a config, in a fixed key order.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  return {{"variant", c.variant},
          {"ablate_attention", c.ablate_attention ? "true" : "false"},
          {"softmax_scale", c.softmax_scale},
          {"batch_size", std::to_string(c.batch_size)},
          {"lr_initial", detail::format_double(c.lr_initial)},
          {"lr_decay", detail::format_double(c.lr_decay)},
          {"decay_every_epochs", std::to_string(c.decay_every_epochs)},
          {"beta1", detail::format_double(c.beta1)},
          {"beta2", detail::format_double(c.beta2)},
          {"epsilon", detail::format_double(c.epsilon)},
          {"grad_clip", detail::format_double(c.grad_clip)},
          {"max_epochs", std::to_string(c.max_epochs)},
          {"qf_set", detail::join_ints(c.qf_set)},
          {"crop_size", std::to_string(c.crop_size)},
          {"seed", std::to_string(c.seed)},
          {"augment_flip", c.augment_flip ? "true" : "false"}};
}

// Applies one key/value pair; unknown keys are rejected.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto as_bool = [&](const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
  };
  try {
    if (key == "variant") c.variant = value;
    else if (key == "ablate_attention") c.ablate_attention = as_bool(value);
    else if (key == "softmax_scale") c.softmax_scale = value;
    else if (key == "batch_size") c.batch_size = std::stoi(value);
    else if (key == "lr_initial") c.lr_initial = std::stod(value);
    else if (key == "lr_decay") c.lr_decay = std::stod(value);
    else if (key == "decay_every_epochs") c.decay_every_epochs = std::stoi(value);
    else if (key == "beta1") c.beta1 = std::stod(value);
    else if (key == "beta2") c.beta2 = std::stod(value);
    else if (key == "epsilon") c.epsilon = std::stod(value);
    else if (key == "grad_clip") c.grad_clip = std::stod(value);
    else if (key == "max_epochs") c.max_epochs = std::stoi(value);
    else if (key == "qf_set") c.qf_set = parse_int_list(value);
    else if (key == "crop_size") c.crop_size = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "augment_flip") c.augment_flip = as_bool(value);
    else throw ConfigError("unknown training config key '" + key + "'");
  } catch (const std::logic_error&) {
    throw ConfigError("bad value '" + value + "' for '" + key + "'");
  }
}

// "key = value" lines; '#' starts a comment.
inline TrainConfig parse_config(std::istream& in, TrainConfig base = {}) {
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config(const fs::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in, std::move(base));
}

inline std::string format_config(const TrainConfig& c) {
  std::string s;
  for (const auto& [k, v] : to_key_values(c)) s += k + " = " + v + "\n";
  return s;
}

// lr_initial * lr_decay ^ floor(epoch / decay_every_epochs)
inline double lr_schedule(int epoch, const TrainConfig& c) {
  if (epoch < 0) throw ValidationError("epoch must be >= 0");
  return c.lr_initial * std::pow(c.lr_decay, epoch / c.decay_every_epochs);
}

// Sum over the two views of the per-view mean absolute error.
template <typename T>
Var<T> l1_pair_loss(const Var<T>& enh_left, const Var<T>& enh_right, const Tensor<T>& raw_left,
                    const Tensor<T>& raw_right) {
  if (enh_left.shape() != raw_left.shape() || enh_right.shape() != raw_right.shape() ||
      enh_left.shape() != enh_right.shape()) {
    throw ValidationError("l1_pair_loss: shapes differ: " + shape_str(enh_left.shape()) + ", " +
                          shape_str(enh_right.shape()) + ", " + shape_str(raw_left.shape()) + ", " +
                          shape_str(raw_right.shape()));
  }
  return ops::add(ops::l1_mean(enh_left, raw_left), ops::l1_mean(enh_right, raw_right));
}

template <typename T>
double l1_pair_loss(const Tensor<T>& enh_left, const Tensor<T>& enh_right, const Tensor<T>& raw_left,
                    const Tensor<T>& raw_right) {
  NoGradGuard g;
  return static_cast<double>(l1_pair_loss(Var<T>(enh_left), Var<T>(enh_right), raw_left, raw_right).value()[0]);
}

struct AdamState {
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const nn::ModelWeights<float>& w) {
    AdamState s;
    for (const auto& [k, t] : w.params) {
      s.m.emplace(k, Tensor<float>(t.shape()));
      s.v.emplace(k, Tensor<float>(t.shape()));
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update. A zero gradient leaves a parameter with
// zero moments untouched.
inline void adam_update(nn::ModelWeights<float>& w, AdamState& s, const std::map<std::string, Tensor<float>>& grads,
                        double lr, const TrainConfig& c) {
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  const auto b1 = static_cast<float>(c.beta1), b2 = static_cast<float>(c.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(c.epsilon);
  for (auto& [k, p] : w.params) {
    const auto& g = grads.at(k);
    auto& m = s.m.at(k);
    auto& v = s.v.at(k);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Stacks crops into (B, 3, h, w) tensors for the four roles.
struct CropBatch {
  Tensor<float> compressed_left, compressed_right, raw_left, raw_right;
};

inline CropBatch make_batch(const std::vector<data::TrainingCrop>& crops) {
  if (crops.empty()) throw ValidationError("empty training batch");
  const int h = crops.front().raw_left.height, w = crops.front().raw_left.width;
  const auto b = static_cast<std::int64_t>(crops.size());
  CropBatch out{Tensor<float>({b, 3, h, w}), Tensor<float>({b, 3, h, w}), Tensor<float>({b, 3, h, w}),
                Tensor<float>({b, 3, h, w})};
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& c = crops[static_cast<std::size_t>(i)];
    for (const Raster* r : {&c.compressed_left, &c.compressed_right, &c.raw_left, &c.raw_right}) {
      if (r->height != h || r->width != w) throw ValidationError("training batch mixes crop sizes");
    }
    raster_into_tensor(c.compressed_left, out.compressed_left, i);
    raster_into_tensor(c.compressed_right, out.compressed_right, i);
    raster_into_tensor(c.raw_left, out.raw_left, i);
    raster_into_tensor(c.raw_right, out.raw_right, i);
  }
  return out;
}

inline StepResult train_step(const CropBatch& batch, nn::ModelWeights<float>& weights, AdamState& state, double lr,
                             const TrainConfig& c) {
  nn::ParamSet<float> params(weights, true);
  const nn::Scope<float> scope(params);
  std::pair<Var<float>, Var<float>> out;
  try {
    out = nn::forward(Var<float>(batch.compressed_left), Var<float>(batch.compressed_right), scope, weights.arch);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(e.what()) + " at step " + std::to_string(state.step + 1) + " (lr " +
                        detail::format_double(lr) + ")");
  }
  const auto& [el, er] = out;
  const auto loss_var = l1_pair_loss(el, er, batch.raw_left, batch.raw_right);
  const double loss = loss_var.value()[0];
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss " + detail::format_double(loss) + " at step " +
                        std::to_string(state.step + 1) + " (lr " + detail::format_double(lr) + ")");
  }
  backward(loss_var);
  std::map<std::string, Tensor<float>> grads;
  double norm2 = 0.0;
  for (auto& [k, v] : params.vars()) {
    auto g = v.grad();
    for (float x : g.storage()) norm2 += static_cast<double>(x) * x;
    grads.emplace(k, std::move(g));
  }
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) {
    throw TrainingError("non-finite gradient at step " + std::to_string(state.step + 1) + " (lr " +
                        detail::format_double(lr) + ", loss " + detail::format_double(loss) + ")");
  }
  if (c.grad_clip > 0.0 && norm > c.grad_clip) {
    const auto s = static_cast<float>(c.grad_clip / norm);
    for (auto& [k, g] : grads) {
      for (auto& x : g.storage()) x *= s;
    }
  }
  adam_update(weights, state, grads, lr, c);
  ++weights.training_step;
  return {loss, norm};
}

inline StepResult train_step(const std::vector<data::TrainingCrop>& crops, nn::ModelWeights<float>& weights,
                             AdamState& state, double lr, const TrainConfig& c) {
  return train_step(make_batch(crops), weights, state, lr, c);
}

struct Checkpoint {
  nn::ModelWeights<float> weights;
  AdamState optimizer;
  int epoch = 0;  // completed epochs
  std::uint64_t global_step = 0;
  TrainConfig config;
  std::vector<double> loss_history;  // mean loss of each completed epoch
  double best_loss = std::numeric_limits<double>::infinity();

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  nn::TensorArchive a;
  nn::put_model(a, ck.weights);
  for (const auto& [k, t] : ck.optimizer.m) a.tensors["adam.m/" + k] = t;
  for (const auto& [k, t] : ck.optimizer.v) a.tensors["adam.v/" + k] = t;
  a.meta["adam_step"] = std::to_string(ck.optimizer.step);
  a.meta["epoch"] = std::to_string(ck.epoch);
  a.meta["global_step"] = std::to_string(ck.global_step);
  a.meta["best_loss"] = detail::format_double(ck.best_loss);
  std::string hist;
  for (std::size_t i = 0; i < ck.loss_history.size(); ++i) hist += (i ? "," : "") + detail::format_double(ck.loss_history[i]);
  a.meta["loss_history"] = hist;
  for (const auto& [k, v] : to_key_values(ck.config)) a.meta["config." + k] = v;
  nn::save_archive(a, path);
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  const auto a = nn::load_archive(path);
  Checkpoint ck;
  ck.weights = nn::get_model(a);
  try {
    for (const auto& [k, v] : a.meta) {
      if (k.rfind("config.", 0) == 0) set_config_value(ck.config, k.substr(7), v);
    }
    ck.optimizer.step = std::stoull(a.meta_at("adam_step"));
    ck.epoch = std::stoi(a.meta_at("epoch"));
    ck.global_step = std::stoull(a.meta_at("global_step"));
    ck.best_loss = std::stod(a.meta_at("best_loss"));
    std::stringstream hs(a.meta_at("loss_history"));
    for (std::string item; std::getline(hs, item, ',');) ck.loss_history.push_back(std::stod(item));
  } catch (const std::logic_error& e) {
    throw ValidationError("bad training checkpoint " + path.string() + ": " + e.what());
  }
  for (const auto& [k, t] : ck.weights.params) {
    auto m = a.tensors.find("adam.m/" + k);
    auto v = a.tensors.find("adam.v/" + k);
    if (m == a.tensors.end() || v == a.tensors.end()) {
      throw ValidationError("checkpoint " + path.string() + " lacks optimizer state for '" + k + "'");
    }
    ck.optimizer.m.emplace(k, m->second);
    ck.optimizer.v.emplace(k, v->second);
  }
  return ck;
}

struct StepLog {
  int epoch;
  std::uint64_t step;
  double lr;
  double loss;
};

struct LoopOptions {
  fs::path out_dir;                    // empty: keep everything in memory
  std::optional<Checkpoint> resume;    // continue from this state
  std::function<void(const StepLog&)> on_step;
};

// Train items of one epoch in seeded order, each with its crop drawn from the
// same per-epoch stream; the order depends only on (seed, epoch).
inline std::vector<data::TrainingCrop> epoch_crops(const data::DatasetManifest& manifest, const TrainConfig& c,
                                                   int epoch) {
  Rng rng(mix_seed(c.seed, static_cast<std::uint64_t>(epoch) + 1));
  std::vector<std::pair<const data::ManifestEntry*, int>> items;
  for (const auto* e : manifest.in_split(data::Split::kTrain)) {
    for (int qf : c.qf_set) items.emplace_back(e, qf);
  }
  rng.shuffle(items);
  std::vector<data::TrainingCrop> crops;
  crops.reserve(items.size());
  for (const auto& [e, qf] : items) {
    const auto o = data::draw_crop_origin(e->height, e->width, c.crop_size, rng);
    auto crop = data::crop_pairs(data::load_pair(*e, qf), data::load_pair(*e, std::nullopt), o, c.crop_size);
    if (c.augment_flip && rng.uniform() < 0.5) crop = data::flip_swap(crop);
    crops.push_back(std::move(crop));
  }
  return crops;
}

inline Checkpoint train_loop(const data::DatasetManifest& manifest, const TrainConfig& config,
                             const LoopOptions& opt = {}) {
  config.validate();
  if (manifest.in_split(data::Split::kTrain).empty()) throw DatasetError("manifest has no training pairs");
  for (const auto* e : manifest.in_split(data::Split::kTrain)) {
    for (int qf : config.qf_set) e->at_qf(qf);
  }

  Checkpoint ck;
  if (opt.resume) {
    ck = *opt.resume;
    if (ck.weights.arch != config.architecture()) {
      throw ValidationError("resume checkpoint architecture does not match the training config");
    }
  } else {
    ck.weights = nn::init_model<float>(config.architecture(), config.seed);
    ck.optimizer = AdamState::zeros_like(ck.weights);
  }
  ck.config = config;

  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) throw IoError("cannot create " + opt.out_dir.string() + ": " + ec.message());
    const auto log_path = opt.out_dir / "train_log.csv";
    // A fresh run starts a new log; a resumed run appends to it.
    const bool fresh = !opt.resume || !fs::exists(log_path) || fs::file_size(log_path) == 0;
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open training log " + log_path.string());
    if (fresh) log << "epoch,step,lr,loss\n";
  }

  for (int epoch = ck.epoch; epoch < config.max_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    const auto crops = epoch_crops(manifest, config, epoch);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t i = 0; i < crops.size(); i += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(crops.size(), i + static_cast<std::size_t>(config.batch_size));
      const std::vector<data::TrainingCrop> batch(crops.begin() + static_cast<std::ptrdiff_t>(i),
                                                  crops.begin() + static_cast<std::ptrdiff_t>(end));
      StepResult r;
      try {
        r = train_step(batch, ck.weights, ck.optimizer, lr, config);
      } catch (const TrainingError&) {
        if (!opt.out_dir.empty()) save_checkpoint(ck, opt.out_dir / "diverged.sqeckpt");
        throw;
      }
      ++ck.global_step;
      sum += r.loss;
      ++batches;
      const StepLog entry{epoch, ck.global_step, lr, r.loss};
      if (log.is_open()) log << epoch << ',' << ck.global_step << ',' << detail::format_double(lr) << ','
                             << detail::format_double(r.loss) << '\n' << std::flush;
      if (opt.on_step) opt.on_step(entry);
    }
    const double mean = sum / std::max(batches, 1);
    ck.loss_history.push_back(mean);
    ck.epoch = epoch + 1;
    const bool best = mean < ck.best_loss;
    if (best) ck.best_loss = mean;
    if (!opt.out_dir.empty()) {
      save_checkpoint(ck, opt.out_dir / ("epoch_" + std::to_string(ck.epoch) + ".sqeckpt"));
      save_checkpoint(ck, opt.out_dir / "last.sqeckpt");
      if (best) save_checkpoint(ck, opt.out_dir / "best.sqeckpt");
    }
  }
  if (!opt.out_dir.empty()) save_checkpoint(ck, opt.out_dir / "last.sqeckpt");
  return ck;
}

}  // namespace stereoqe::train
