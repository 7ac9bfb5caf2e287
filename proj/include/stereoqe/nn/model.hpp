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

// Bi-level cross-view attention network for stereo JPEG artifact removal.
//
// Both views run through one set of weights. Internally the views are stacked
// on the batch axis as [left..., right...], so a cross-view step only has to
// exchange the two halves to read keys and values from the other view.
//
//   head:   conv3x3(3 -> C), RDB
//   patch1: intra-patch, cross-patch, intra-patch attention
//   fuse:   concat(head, patch1) -> CA -> conv1x1(2C -> C) -> x * sigmoid(conv3x3(x))
//   pixel:  cross-row attention, intra-row attention
//   mid:    conv1x1, RDB, RDB
//   patch2: intra-patch, cross-patch, intra-patch attention
//   tail:   RDB, conv3x3(C -> 3), + input
//
// The ablated configuration drops patch1, fuse, pixel and patch2.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stereoqe/core/autograd.hpp"
#include "stereoqe/core/error.hpp"
#include "stereoqe/core/ops.hpp"
#include "stereoqe/core/rng.hpp"
#include "stereoqe/core/tensor.hpp"

namespace stereoqe::nn {

enum class SoftmaxScale { kNone, kInverseSqrtChannels };

inline std::string to_string(SoftmaxScale s) { return s == SoftmaxScale::kNone ? "none" : "inverse_sqrt_channels"; }

inline SoftmaxScale softmax_scale_from_string(const std::string& s) {
  if (s == "none") return SoftmaxScale::kNone;
  if (s == "inverse_sqrt_channels") return SoftmaxScale::kInverseSqrtChannels;
  throw ConfigError("unknown softmax scale '" + s + "'");
}

struct ModelVariant {
  char size = 'L';  // 'S', 'M' or 'L'
  bool ablate_attention = false;

  int channels() const {
    switch (size) {
      case 'S': return 32;
      case 'M': return 48;
      case 'L': return 64;
    }
    throw ConfigError(std::string("unknown model variant '") + size + "'");
  }
  std::string name() const { return std::string(1, size); }

  static ModelVariant from_name(const std::string& name, bool ablate = false) {
    if (name != "S" && name != "M" && name != "L") {
      throw ConfigError("variant must be S, M or L, got '" + name + "'");
    }
    return {name[0], ablate};
  }
};

struct ArchitectureConfig {
  std::string variant = "L";  // S, M, L, or "custom" for hand-sized models
  int channels = 64;
  bool ablate_attention = false;
  int patch_size = 16;
  int rdb_layers = 7;
  int rdb_growth = 32;
  int ca_reduction = 16;
  SoftmaxScale softmax_scale = SoftmaxScale::kNone;

  static ArchitectureConfig for_variant(const ModelVariant& v) {
    ArchitectureConfig c;
    c.variant = v.name();
    c.channels = v.channels();
    c.ablate_attention = v.ablate_attention;
    return c;
  }

  void validate() const {
    if (channels < 1 || patch_size < 1 || rdb_layers < 1 || rdb_growth < 1 || ca_reduction < 1) {
      throw ConfigError("architecture extents must be positive");
    }
    if (!ablate_attention && (2 * channels < ca_reduction || (2 * channels) % ca_reduction != 0)) {
      throw ConfigError("channel attention over " + std::to_string(2 * channels) +
                        " channels needs a reduction ratio dividing it, got " + std::to_string(ca_reduction));
    }
  }

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::int64_t fan_in;
};

namespace detail {

inline void conv_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t cin,
                      std::int64_t cout, std::int64_t k) {
  out.push_back({name + ".weight", {cout, cin, k, k}, cin * k * k});
  out.push_back({name + ".bias", {cout}, cin * k * k});
}

inline void attention_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t c) {
  for (const char* p : {".q", ".k", ".v"}) conv_spec(out, name + p, c, c, 1);
}

inline void rdb_spec(std::vector<ParamSpec>& out, const std::string& name, const ArchitectureConfig& a) {
  const std::int64_t c = a.channels, g = a.rdb_growth;
  for (int i = 0; i < a.rdb_layers; ++i) conv_spec(out, name + ".conv" + std::to_string(i), c + i * g, g, 3);
  conv_spec(out, name + ".fuse", c + a.rdb_layers * g, c, 1);
}

inline void patch_module_spec(std::vector<ParamSpec>& out, const std::string& name, std::int64_t c) {
  attention_spec(out, name + ".intra_pre", c);
  attention_spec(out, name + ".cross", c);
  attention_spec(out, name + ".intra_post", c);
}

}  // namespace detail

// Every learnable tensor in forward order. The key set depends only on the
// architecture config.
inline std::vector<ParamSpec> architecture(const ArchitectureConfig& a) {
  a.validate();
  const std::int64_t c = a.channels;
  std::vector<ParamSpec> out;
  detail::conv_spec(out, "head.conv", 3, c, 3);
  detail::rdb_spec(out, "head.rdb", a);
  if (!a.ablate_attention) {
    detail::patch_module_spec(out, "patch1", c);
    const std::int64_t hidden = 2 * c / a.ca_reduction;
    detail::conv_spec(out, "fuse.ca.down", 2 * c, hidden, 1);
    detail::conv_spec(out, "fuse.ca.up", hidden, 2 * c, 1);
    detail::conv_spec(out, "fuse.reduce", 2 * c, c, 1);
    detail::conv_spec(out, "fuse.gate", c, c, 3);
    detail::attention_spec(out, "pixel.cross", c);
    detail::attention_spec(out, "pixel.intra", c);
  }
  detail::conv_spec(out, "mid.conv", c, c, 1);
  detail::rdb_spec(out, "mid.rdb0", a);
  detail::rdb_spec(out, "mid.rdb1", a);
  if (!a.ablate_attention) detail::patch_module_spec(out, "patch2", c);
  detail::rdb_spec(out, "tail.rdb", a);
  detail::conv_spec(out, "tail.conv", c, 3, 3);
  return out;
}

template <typename T>
struct ModelWeights {
  ArchitectureConfig arch;
  std::uint64_t init_seed = 0;
  std::uint64_t training_step = 0;
  std::map<std::string, Tensor<T>> params;

  const Tensor<T>& at(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw ValidationError("model has no weight '" + key + "'");
    return it->second;
  }

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out{arch, init_seed, training_step, {}};
    for (const auto& [k, v] : params) out.params.emplace(k, v.template cast<U>());
    return out;
  }

  bool all_finite() const {
    for (const auto& [k, v] : params) {
      if (!v.all_finite()) return false;
    }
    return true;
  }

  // Throws unless the key set and shapes match the architecture exactly.
  void validate() const {
    const auto specs = architecture(arch);
    if (specs.size() != params.size()) {
      throw ValidationError("model has " + std::to_string(params.size()) + " tensors, architecture expects " +
                            std::to_string(specs.size()));
    }
    for (const auto& s : specs) {
      const auto& t = at(s.name);
      if (t.shape() != s.shape) {
        throw ValidationError("weight '" + s.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                              shape_str(s.shape));
      }
    }
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases. Each
// tensor draws from its own stream keyed by name, so adding or removing
// modules leaves the other tensors unchanged.
template <typename T = float>
ModelWeights<T> init_model(const ArchitectureConfig& arch, std::uint64_t seed) {
  ModelWeights<T> w;
  w.arch = arch;
  w.init_seed = seed;
  for (const auto& s : architecture(arch)) {
    Rng rng(mix_seed(seed, hash_name(s.name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    Tensor<T> t(s.shape);
    for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    w.params.emplace(s.name, std::move(t));
  }
  return w;
}

template <typename T = float>
ModelWeights<T> init_model(const ModelVariant& variant, std::uint64_t seed) {
  return init_model<T>(ArchitectureConfig::for_variant(variant), seed);
}

template <typename T>
std::int64_t count_params(const ModelWeights<T>& w) {
  std::int64_t n = 0;
  for (const auto& [k, v] : w.params) n += static_cast<std::int64_t>(v.size());
  return n;
}

inline std::int64_t count_params(const ArchitectureConfig& a) {
  std::int64_t n = 0;
  for (const auto& s : architecture(a)) n += shape_numel(s.shape);
  return n;
}

// Graph leaves for one forward pass.
template <typename T>
class ParamSet {
 public:
  ParamSet(const ModelWeights<T>& w, bool requires_grad) {
    for (const auto& [k, v] : w.params) vars_.emplace(k, Var<T>(v, requires_grad));
  }
  const std::map<std::string, Var<T>>& vars() const { return vars_; }
  std::map<std::string, Var<T>>& vars() { return vars_; }

 private:
  std::map<std::string, Var<T>> vars_;
};

// Hierarchical view of a ParamSet under a key prefix.
template <typename T>
class Scope {
 public:
  Scope(const ParamSet<T>& set, std::string prefix = {}) : vars_(&set.vars()), prefix_(std::move(prefix)) {}

  const Var<T>& operator[](std::string_view name) const {
    const std::string key = prefix_ + std::string(name);
    auto it = vars_->find(key);
    if (it == vars_->end()) throw ValidationError("missing weight '" + key + "'");
    return it->second;
  }
  Scope sub(std::string_view name) const { return Scope(*vars_, prefix_ + std::string(name) + "."); }

 private:
  Scope(const std::map<std::string, Var<T>>& vars, std::string prefix) : vars_(&vars), prefix_(std::move(prefix)) {}
  const std::map<std::string, Var<T>>* vars_;
  std::string prefix_;
};

template <typename T>
Var<T> conv(const Var<T>& x, const Scope<T>& w, ops::Activation act = ops::Activation::kNone) {
  return ops::conv2d(x, w["weight"], w["bias"], act);
}

template <typename T>
Var<T> conv(const std::vector<Var<T>>& xs, const Scope<T>& w, ops::Activation act = ops::Activation::kNone) {
  return ops::conv2d(xs, w["weight"], w["bias"], act);
}

template <typename T>
void debug_check_finite([[maybe_unused]] const Var<T>& v, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!v.value().all_finite()) throw TrainingError(std::string("non-finite activation after ") + where);
#endif
}

namespace detail {

template <typename T>
T softmax_scale(SoftmaxScale s, std::int64_t channels) {
  return s == SoftmaxScale::kNone ? T{1} : T{1} / std::sqrt(static_cast<T>(channels));
}

// Residual attention: query_src + merge(attention(Q(query_src), K(kv_src), V(kv_src)))
// with tokens grouped by ph x pw windows.
template <typename T>
Var<T> attend(const Var<T>& query_src, const Var<T>& kv_src, const Scope<T>& w, std::int64_t ph,
              std::int64_t pw, SoftmaxScale scale) {
  if (query_src.shape() != kv_src.shape()) {
    throw ValidationError("attention: query " + shape_str(query_src.shape()) + " and key/value " +
                          shape_str(kv_src.shape()) + " features differ");
  }
  const auto q = ops::patch_partition(conv(query_src, w.sub("q")), ph, pw);
  const auto k = ops::patch_partition(conv(kv_src, w.sub("k")), ph, pw);
  const auto v = ops::patch_partition(conv(kv_src, w.sub("v")), ph, pw);
  const auto o = ops::attention_core(q, k, v, softmax_scale<T>(scale, query_src.dim(1)));
  return ops::add(query_src, ops::patch_merge(o, query_src.shape(), ph, pw));
}

template <typename T>
void require_stacked(const Var<T>& f) {
  require_rank(f.shape(), 4, "stereo feature");
  if (f.dim(0) % 2 != 0) throw ValidationError("stacked stereo feature needs an even batch, got " + shape_str(f.shape()));
}

template <typename T>
Var<T> stack_views(const Var<T>& left, const Var<T>& right) {
  if (left.shape() != right.shape()) {
    throw ValidationError("left view " + shape_str(left.shape()) + " and right view " +
                          shape_str(right.shape()) + " differ in shape");
  }
  return ops::concat_batch(left, right);
}

template <typename T>
std::pair<Var<T>, Var<T>> unstack_views(const Var<T>& f) {
  const std::int64_t b = f.dim(0) / 2;
  return {ops::slice_batch(f, 0, b), ops::slice_batch(f, b, b)};
}

}  // namespace detail

// ---- stacked-view building blocks ---------------------------------------------
// `f` holds [left..., right...] on the batch axis.

template <typename T>
Var<T> intra_patch_attention(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  return detail::attend(f, f, w, a.patch_size, a.patch_size, a.softmax_scale);
}

template <typename T>
Var<T> cross_patch_attention_stacked(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  detail::require_stacked(f);
  return detail::attend(f, ops::swap_halves(f), w, a.patch_size, a.patch_size, a.softmax_scale);
}

template <typename T>
Var<T> patch_attention_module_stacked(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  auto x = intra_patch_attention(f, w.sub("intra_pre"), a);
  x = cross_patch_attention_stacked(x, w.sub("cross"), a);
  x = intra_patch_attention(x, w.sub("intra_post"), a);
  debug_check_finite(x, "patch attention");
  return x;
}

// Row-wise (epipolar) attention: every pixel attends over its whole image row.
template <typename T>
Var<T> intra_pixel_attention(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  return detail::attend(f, f, w, 1, f.dim(3), a.softmax_scale);
}

template <typename T>
Var<T> cross_pixel_attention_stacked(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  detail::require_stacked(f);
  return detail::attend(f, ops::swap_halves(f), w, 1, f.dim(3), a.softmax_scale);
}

template <typename T>
Var<T> pixel_attention_module_stacked(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  auto x = cross_pixel_attention_stacked(f, w.sub("cross"), a);
  x = intra_pixel_attention(x, w.sub("intra"), a);
  debug_check_finite(x, "pixel attention");
  return x;
}

// Squeeze-and-excitation style gating: x * sigmoid(up(relu(down(avgpool(x))))).
template <typename T>
Var<T> channel_attention(const Var<T>& f, const Scope<T>& w) {
  const auto pooled = ops::global_avg_pool(f);
  const auto hidden = conv(pooled, w.sub("down"), ops::Activation::kRelu);
  const auto gate = ops::sigmoid(conv(hidden, w.sub("up")));
  return ops::scale_channels(f, gate);
}

template <typename T>
Var<T> residual_dense_block(const Var<T>& f, const Scope<T>& w, const ArchitectureConfig& a) {
  std::vector<Var<T>> features{f};
  for (int i = 0; i < a.rdb_layers; ++i) {
    features.push_back(conv(features, w.sub("conv" + std::to_string(i)), ops::Activation::kRelu));
  }
  auto out = ops::add(f, conv(features, w.sub("fuse")));
  debug_check_finite(out, "residual dense block");
  return out;
}

template <typename T>
Var<T> fuse_and_gate(const Var<T>& f_in, const Var<T>& f_att, const Scope<T>& w) {
  if (f_in.shape() != f_att.shape()) {
    throw ValidationError("fuse_and_gate: input " + shape_str(f_in.shape()) + " and attention " +
                          shape_str(f_att.shape()) + " features differ");
  }
  const auto cat = ops::concat_channels(std::vector<Var<T>>{f_in, f_att});
  const auto fused = conv(channel_attention(cat, w.sub("ca")), w.sub("reduce"));
  const auto gate = ops::sigmoid(conv(fused, w.sub("gate")));
  return ops::mul(fused, gate);
}

// ---- per-view API ------------------------------------------------------------

template <typename T>
std::pair<Var<T>, Var<T>> cross_patch_attention(const Var<T>& left, const Var<T>& right, const Scope<T>& w,
                                                const ArchitectureConfig& a) {
  return detail::unstack_views(cross_patch_attention_stacked(detail::stack_views(left, right), w, a));
}

template <typename T>
std::pair<Var<T>, Var<T>> patch_attention_module(const Var<T>& left, const Var<T>& right, const Scope<T>& w,
                                                 const ArchitectureConfig& a) {
  return detail::unstack_views(patch_attention_module_stacked(detail::stack_views(left, right), w, a));
}

template <typename T>
std::pair<Var<T>, Var<T>> cross_pixel_attention(const Var<T>& left, const Var<T>& right, const Scope<T>& w,
                                                const ArchitectureConfig& a) {
  return detail::unstack_views(cross_pixel_attention_stacked(detail::stack_views(left, right), w, a));
}

template <typename T>
std::pair<Var<T>, Var<T>> pixel_attention_module(const Var<T>& left, const Var<T>& right, const Scope<T>& w,
                                                 const ArchitectureConfig& a) {
  return detail::unstack_views(pixel_attention_module_stacked(detail::stack_views(left, right), w, a));
}

// Full network on stacked views (2B, 3, H, W) in [0, 1], H and W multiples
// of the patch size. Output is the unclamped enhanced stack.
template <typename T>
Var<T> forward_stacked(const Var<T>& x, const Scope<T>& w, const ArchitectureConfig& a) {
  detail::require_stacked(x);
  auto f = residual_dense_block(conv(x, w.sub("head.conv")), w.sub("head.rdb"), a);
  Var<T> g = f;
  if (!a.ablate_attention) {
    const auto p = patch_attention_module_stacked(f, w.sub("patch1"), a);
    g = pixel_attention_module_stacked(fuse_and_gate(f, p, w.sub("fuse")), w.sub("pixel"), a);
  }
  auto m = conv(g, w.sub("mid.conv"));
  m = residual_dense_block(m, w.sub("mid.rdb0"), a);
  m = residual_dense_block(m, w.sub("mid.rdb1"), a);
  if (!a.ablate_attention) m = patch_attention_module_stacked(m, w.sub("patch2"), a);
  const auto t = residual_dense_block(m, w.sub("tail.rdb"), a);
  return ops::add(x, conv(t, w.sub("tail.conv")));
}

// Enhances a (B, 3, H, W) view pair in [0, 1]. Sizes that are not multiples
// of the patch size are reflect-padded and cropped back. Outputs are not clamped.
template <typename T>
std::pair<Var<T>, Var<T>> forward(const Var<T>& left, const Var<T>& right, const Scope<T>& w,
                                  const ArchitectureConfig& a) {
  if (left.shape() != right.shape()) {
    throw ValidationError("left image " + shape_str(left.shape()) + " and right image " +
                          shape_str(right.shape()) + " differ in size");
  }
  require_rank(left.shape(), 4, "forward input");
  if (left.dim(1) != 3) throw ValidationError("forward expects 3-channel images, got " + shape_str(left.shape()));
  const std::int64_t H = left.dim(2), W = left.dim(3), p = a.patch_size;
  const std::int64_t pad_h = (p - H % p) % p, pad_w = (p - W % p) % p;
  auto x = detail::stack_views(left, right);
  x = ops::reflect_pad(x, pad_h, pad_w);
  auto y = forward_stacked(x, w, a);
  y = ops::crop(y, 0, 0, H, W);
  return detail::unstack_views(y);
}

}  // namespace stereoqe::nn
