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

// Differentiable primitives over Var<T>. Feature maps are NCHW.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "stereoqe/core/autograd.hpp"
#include "stereoqe/core/blas.hpp"
#include "stereoqe/core/tensor.hpp"

namespace stereoqe::ops {

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                          shape_str(b));
  }
}

// Upper bound on the number of elements in one im2col band.
inline constexpr std::int64_t kIm2colBudget = std::int64_t{1} << 22;

// Copies rows [y0, y1) of a k x k im2col expansion of several inputs, which
// are treated as one tensor concatenated along channels. Layout of `col` is
// (sum(C) * k * k, (y1 - y0) * W).
template <typename T>
void im2col_band(const std::vector<const T*>& srcs, const std::vector<std::int64_t>& chans,
                 std::int64_t H, std::int64_t W, int k, std::int64_t y0, std::int64_t y1, T* col) {
  const int pad = k / 2;
  const std::int64_t band = (y1 - y0) * W;
  std::int64_t row = 0;
  for (std::size_t s = 0; s < srcs.size(); ++s) {
    for (std::int64_t c = 0; c < chans[s]; ++c) {
      const T* plane = srcs[s] + c * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = col + row * band;
          const int dx = kx - pad;
          const std::int64_t xs = std::max<std::int64_t>(0, -dx);
          const std::int64_t xe = std::min<std::int64_t>(W, W - dx);
          for (std::int64_t y = y0; y < y1; ++y) {
            T* d = dst + (y - y0) * W;
            const std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= H || xs >= xe) {
              std::fill(d, d + W, T{0});
              continue;
            }
            std::fill(d, d + xs, T{0});
            std::memcpy(d + xs, plane + sy * W + xs + dx, sizeof(T) * (xe - xs));
            std::fill(d + xe, d + W, T{0});
          }
        }
      }
    }
  }
}

// Adjoint of im2col_band: accumulates `col` back into the input gradients.
// Null destinations are skipped.
template <typename T>
void col2im_band(const T* col, const std::vector<T*>& dsts, const std::vector<std::int64_t>& chans,
                 std::int64_t H, std::int64_t W, int k, std::int64_t y0, std::int64_t y1) {
  const int pad = k / 2;
  const std::int64_t band = (y1 - y0) * W;
  std::int64_t row = 0;
  for (std::size_t s = 0; s < dsts.size(); ++s) {
    if (!dsts[s]) {
      row += chans[s] * k * k;
      continue;
    }
    for (std::int64_t c = 0; c < chans[s]; ++c) {
      T* plane = dsts[s] + c * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = col + row * band;
          const int dx = kx - pad;
          const std::int64_t xs = std::max<std::int64_t>(0, -dx);
          const std::int64_t xe = std::min<std::int64_t>(W, W - dx);
          for (std::int64_t y = y0; y < y1; ++y) {
            const std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            const T* s_row = src + (y - y0) * W;
            T* d_row = plane + sy * W + dx;
            for (std::int64_t x = xs; x < xe; ++x) d_row[x] += s_row[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

enum class Activation { kNone, kRelu };

// Stride-1 "same" convolution with an odd square kernel over the channel-wise
// concatenation of `inputs` (never materialized). weight: (Cout, sum C, k, k),
// bias: (Cout). An optional ReLU is fused into the output.
template <typename T>
Var<T> conv2d(const std::vector<Var<T>>& inputs, const Var<T>& weight, const Var<T>& bias,
              Activation act = Activation::kNone) {
  if (inputs.empty()) throw ValidationError("conv2d: no inputs");
  const Shape& s0 = inputs.front().shape();
  require_rank(s0, 4, "conv2d input");
  const std::int64_t N = s0[0], H = s0[2], W = s0[3];
  std::vector<std::int64_t> chans;
  std::int64_t cin = 0;
  for (const auto& in : inputs) {
    require_rank(in.shape(), 4, "conv2d input");
    if (in.dim(0) != N || in.dim(2) != H || in.dim(3) != W) {
      throw ValidationError("conv2d: inputs disagree on batch/spatial extents: " +
                            shape_str(s0) + " vs " + shape_str(in.shape()));
    }
    chans.push_back(in.dim(1));
    cin += in.dim(1);
  }
  const Shape& ws = weight.shape();
  require_rank(ws, 4, "conv2d weight");
  const std::int64_t cout = ws[0];
  const int k = static_cast<int>(ws[2]);
  if (ws[1] != cin || ws[3] != k || k % 2 == 0) {
    throw ValidationError("conv2d: weight " + shape_str(ws) + " incompatible with " +
                          std::to_string(cin) + " input channels");
  }
  if (bias.shape() != Shape{cout}) throw ValidationError("conv2d: bias shape " + shape_str(bias.shape()));

  const std::int64_t HW = H * W;
  const std::int64_t K = cin * k * k;
  Tensor<T> out({N, cout, H, W});
  const T* wdata = weight.value().data();
  const T* bdata = bias.value().data();
  const std::int64_t band_rows =
      std::clamp<std::int64_t>(detail::kIm2colBudget / std::max<std::int64_t>(1, K * W), 1, H);
  std::vector<T> col;
  if (k > 1) col.resize(static_cast<std::size_t>(K * band_rows * W));

  for (std::int64_t n = 0; n < N; ++n) {
    T* y = out.data() + n * cout * HW;
    for (std::int64_t c = 0; c < cout; ++c) std::fill(y + c * HW, y + (c + 1) * HW, bdata[c]);
    if (k == 1) {
      std::int64_t off = 0;
      for (std::size_t s = 0; s < inputs.size(); ++s) {
        const T* x = inputs[s].value().data() + n * chans[s] * HW;
        blas::gemm(false, false, cout, HW, chans[s], T{1}, wdata + off, cin, x, HW, T{1}, y, HW);
        off += chans[s];
      }
    } else {
      std::vector<const T*> srcs;
      for (std::size_t s = 0; s < inputs.size(); ++s) srcs.push_back(inputs[s].value().data() + n * chans[s] * HW);
      for (std::int64_t y0 = 0; y0 < H; y0 += band_rows) {
        const std::int64_t y1 = std::min(H, y0 + band_rows);
        detail::im2col_band(srcs, chans, H, W, k, y0, y1, col.data());
        blas::gemm(false, false, cout, (y1 - y0) * W, K, T{1}, wdata, K, col.data(), (y1 - y0) * W,
                   T{1}, y + y0 * W, HW);
      }
    }
  }
  if (act == Activation::kRelu) {
    for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
  }

  std::vector<Var<T>> parents = inputs;
  parents.push_back(weight);
  parents.push_back(bias);
  return Var<T>::make(std::move(out), std::move(parents),
                      [chans, N, H, W, cin, cout, k, act, band_rows](Node<T>& self) {
    const std::int64_t HW = H * W;
    const std::int64_t K = cin * k * k;
    const std::size_t n_in = chans.size();
    // dY with the fused activation undone.
    Tensor<T> gy = self.grad;
    if (act == Activation::kRelu) {
      const T* yv = self.value.data();
      for (std::size_t i = 0; i < gy.size(); ++i) if (!(yv[i] > T{0})) gy[i] = T{0};
    }
    auto& wnode = *self.parents[n_in];
    auto& bnode = *self.parents[n_in + 1];
    T* gw = wnode.requires_grad ? wnode.grad_buffer() : nullptr;
    T* gb = bnode.requires_grad ? bnode.grad_buffer() : nullptr;
    const T* wdata = wnode.value.data();
    std::vector<T*> gx(n_in, nullptr);
    std::vector<std::int64_t> gx_batch_stride(n_in);
    std::vector<T> col;
    if (k > 1) col.resize(static_cast<std::size_t>(K * band_rows * W));

    for (std::int64_t n = 0; n < N; ++n) {
      const T* dy = gy.data() + n * cout * HW;
      if (gb) {
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc{0};
          for (std::int64_t i = 0; i < HW; ++i) acc += dy[c * HW + i];
          gb[c] += acc;
        }
      }
      for (std::size_t s = 0; s < n_in; ++s) {
        auto& p = *self.parents[s];
        gx[s] = p.requires_grad ? p.grad_buffer() + n * chans[s] * HW : nullptr;
      }
      if (k == 1) {
        std::int64_t off = 0;
        for (std::size_t s = 0; s < n_in; ++s) {
          const T* x = self.parents[s]->value.data() + n * chans[s] * HW;
          if (gw) blas::gemm(false, true, cout, chans[s], HW, T{1}, dy, HW, x, HW, T{1}, gw + off, cin);
          if (gx[s]) blas::gemm(true, false, chans[s], HW, cout, T{1}, wdata + off, cin, dy, HW, T{1}, gx[s], HW);
          off += chans[s];
        }
        continue;
      }
      std::vector<const T*> srcs;
      for (std::size_t s = 0; s < n_in; ++s) srcs.push_back(self.parents[s]->value.data() + n * chans[s] * HW);
      const bool any_gx = std::any_of(gx.begin(), gx.end(), [](T* p) { return p != nullptr; });
      for (std::int64_t y0 = 0; y0 < H; y0 += band_rows) {
        const std::int64_t y1 = std::min(H, y0 + band_rows);
        const std::int64_t nb = (y1 - y0) * W;
        if (gw) {
          detail::im2col_band(srcs, chans, H, W, k, y0, y1, col.data());
          blas::gemm(false, true, cout, K, nb, T{1}, dy + y0 * W, HW, col.data(), nb, T{1}, gw, K);
        }
        if (any_gx) {
          blas::gemm(true, false, K, nb, cout, T{1}, wdata, K, dy + y0 * W, HW, T{0}, col.data(), nb);
          detail::col2im_band(col.data(), gx, chans, H, W, k, y0, y1);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              Activation act = Activation::kNone) {
  return conv2d(std::vector<Var<T>>{input}, weight, bias, act);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = T{1} / (T{1} + std::exp(-v));
  return Var<T>::make(std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
  return Var<T>::make(std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (self.value[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

// (N, C, H, W) -> (N, C, 1, 1)
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out({N, C, 1, 1});
  const T* xv = x.value().data();
  for (std::int64_t i = 0; i < N * C; ++i) {
    T acc{0};
    for (std::int64_t j = 0; j < HW; ++j) acc += xv[i * HW + j];
    out[static_cast<std::size_t>(i)] = acc / static_cast<T>(HW);
  }
  return Var<T>::make(std::move(out), {x}, [HW](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = self.grad[i] / static_cast<T>(HW);
      for (std::int64_t j = 0; j < HW; ++j) g[i * HW + j] += v;
    }
  });
}

// x: (N, C, H, W), gate: (N, C, 1, 1) -> x scaled per channel.
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& gate) {
  require_rank(x.shape(), 4, "scale_channels");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gate.shape() != Shape{N, C, 1, 1}) {
    throw ValidationError("scale_channels: gate " + shape_str(gate.shape()) + " for " + shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  for (std::int64_t i = 0; i < N * C; ++i) {
    const T s = gate.value()[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < HW; ++j) out[i * HW + j] *= s;
  }
  return Var<T>::make(std::move(out), {x, gate}, [HW](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    const std::size_t planes = pg.value.size();
    T* gx = px.requires_grad ? px.grad_buffer() : nullptr;
    T* gg = pg.requires_grad ? pg.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < planes; ++i) {
      const T s = pg.value[i];
      T acc{0};
      for (std::int64_t j = 0; j < HW; ++j) {
        const std::size_t idx = i * HW + j;
        if (gx) gx[idx] += self.grad[idx] * s;
        acc += self.grad[idx] * px.value[idx];
      }
      if (gg) gg[i] += acc;
    }
  });
}

// Concatenation along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  require_rank(s0, 4, "concat_channels");
  const std::int64_t N = s0[0], HW = s0[2] * s0[3];
  std::vector<std::int64_t> chans;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 4 || p.dim(0) != N || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
      throw ValidationError("concat_channels: shape mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    }
    chans.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<T> out({N, total, s0[2], s0[3]});
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const T* src = parts[i].value().data() + n * chans[i] * HW;
      std::copy(src, src + chans[i] * HW, out.data() + (n * total + off) * HW);
      off += chans[i];
    }
  }
  return Var<T>::make(std::move(out), parts, [chans, N, HW, total](Node<T>& self) {
    for (std::int64_t n = 0; n < N; ++n) {
      std::int64_t off = 0;
      for (std::size_t i = 0; i < chans.size(); ++i) {
        auto& p = *self.parents[i];
        if (p.requires_grad) {
          T* g = p.grad_buffer() + n * chans[i] * HW;
          const T* src = self.grad.data() + (n * total + off) * HW;
          for (std::int64_t j = 0; j < chans[i] * HW; ++j) g[j] += src[j];
        }
        off += chans[i];
      }
    }
  });
}

// Concatenation along the batch axis.
template <typename T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_batch");
  Shape sa = a.shape(), sb = b.shape();
  if (sa[1] != sb[1] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ValidationError("concat_batch: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  Shape so = sa;
  so[0] += sb[0];
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(shape_numel(so)));
  data.insert(data.end(), a.value().storage().begin(), a.value().storage().end());
  data.insert(data.end(), b.value().storage().begin(), b.value().storage().end());
  const std::size_t na = a.value().size();
  return Var<T>::make(Tensor<T>(so, std::move(data)), {a, b}, [na](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = na; i < self.grad.size(); ++i) g[i - na] += self.grad[i];
    }
  });
}

// Items [start, start + count) of the batch axis.
template <typename T>
Var<T> slice_batch(const Var<T>& x, std::int64_t start, std::int64_t count) {
  require_rank(x.shape(), 4, "slice_batch");
  if (start < 0 || count < 0 || start + count > x.dim(0)) {
    throw ValidationError("slice_batch: range out of bounds for " + shape_str(x.shape()));
  }
  Shape so = x.shape();
  so[0] = count;
  const std::size_t item = static_cast<std::size_t>(shape_numel(so) / std::max<std::int64_t>(count, 1));
  const std::size_t off = static_cast<std::size_t>(start) * item;
  std::vector<T> data(x.value().storage().begin() + off,
                      x.value().storage().begin() + off + item * count);
  return Var<T>::make(Tensor<T>(so, std::move(data)), {x}, [off](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer() + off;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// Exchanges the first and second halves of the batch axis. With a stereo
// batch laid out as [left..., right...] this yields the other view.
template <typename T>
Var<T> swap_halves(const Var<T>& x) {
  require_rank(x.shape(), 4, "swap_halves");
  if (x.dim(0) % 2 != 0) throw ValidationError("swap_halves: odd batch in " + shape_str(x.shape()));
  const std::size_t half = x.value().size() / 2;
  Tensor<T> out(x.shape());
  std::copy(x.value().storage().begin() + half, x.value().storage().end(), out.storage().begin());
  std::copy(x.value().storage().begin(), x.value().storage().begin() + half, out.storage().begin() + half);
  return Var<T>::make(std::move(out), {x}, [half](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < half; ++i) {
      g[i + half] += self.grad[i];
      g[i] += self.grad[i + half];
    }
  });
}

namespace detail {

struct PatchGeometry {
  std::int64_t N, C, H, W, ph, pw;
  std::int64_t nh() const { return H / ph; }
  std::int64_t nw() const { return W / pw; }
  std::int64_t groups() const { return N * nh() * nw(); }
  std::int64_t tokens() const { return ph * pw; }
};

// Visits every (feature index, token index) pair of the partition bijection.
template <typename F>
void for_each_patch_index(const PatchGeometry& g, F&& f) {
  const std::int64_t P = g.tokens();
  for (std::int64_t n = 0; n < g.N; ++n) {
    for (std::int64_t c = 0; c < g.C; ++c) {
      for (std::int64_t y = 0; y < g.H; ++y) {
        const std::int64_t gy = (n * g.nh() + y / g.ph) * g.nw();
        const std::int64_t ty = (y % g.ph) * g.pw;
        const std::int64_t feat_row = ((n * g.C + c) * g.H + y) * g.W;
        for (std::int64_t x = 0; x < g.W; ++x) {
          const std::int64_t grp = gy + x / g.pw;
          const std::int64_t tok = ty + x % g.pw;
          f(feat_row + x, (grp * P + tok) * g.C + c);
        }
      }
    }
  }
}

}  // namespace detail

// (N, C, H, W) -> (N * H/ph * W/pw, ph * pw, C). Groups are ordered by
// (batch, patch row, patch column); tokens are raster order inside a patch.
template <typename T>
Var<T> patch_partition(const Var<T>& x, std::int64_t ph, std::int64_t pw) {
  require_rank(x.shape(), 4, "patch_partition");
  const detail::PatchGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), ph, pw};
  if (ph < 1 || pw < 1 || g.H % ph != 0 || g.W % pw != 0) {
    throw ValidationError("patch_partition: " + std::to_string(g.H) + "x" + std::to_string(g.W) +
                          " is not divisible by patch " + std::to_string(ph) + "x" +
                          std::to_string(pw) + "; pad the input first");
  }
  Tensor<T> out({g.groups(), g.tokens(), g.C});
  const T* xv = x.value().data();
  T* ov = out.data();
  detail::for_each_patch_index(g, [&](std::int64_t fi, std::int64_t ti) { ov[ti] = xv[fi]; });
  return Var<T>::make(std::move(out), {x}, [g](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer();
    const T* gt = self.grad.data();
    detail::for_each_patch_index(g, [&](std::int64_t fi, std::int64_t ti) { gx[fi] += gt[ti]; });
  });
}

// Inverse of patch_partition for a feature map of shape `feature_shape`.
template <typename T>
Var<T> patch_merge(const Var<T>& tokens, const Shape& feature_shape, std::int64_t ph, std::int64_t pw) {
  require_rank(feature_shape, 4, "patch_merge");
  const detail::PatchGeometry g{feature_shape[0], feature_shape[1], feature_shape[2],
                                feature_shape[3], ph, pw};
  if (ph < 1 || pw < 1 || g.H % ph != 0 || g.W % pw != 0 ||
      tokens.shape() != Shape{g.groups(), g.tokens(), g.C}) {
    throw ValidationError("patch_merge: tokens " + shape_str(tokens.shape()) +
                          " do not tile feature " + shape_str(feature_shape));
  }
  Tensor<T> out(feature_shape);
  const T* tv = tokens.value().data();
  T* ov = out.data();
  detail::for_each_patch_index(g, [&](std::int64_t fi, std::int64_t ti) { ov[fi] = tv[ti]; });
  return Var<T>::make(std::move(out), {tokens}, [g](Node<T>& self) {
    T* gt = self.parents[0]->grad_buffer();
    const T* gf = self.grad.data();
    detail::for_each_patch_index(g, [&](std::int64_t fi, std::int64_t ti) { gt[ti] += gf[fi]; });
  });
}

// Softmax(scale * Q K^T) V for every group. Q: (G, Nq, C), K and V: (G, Nk, C).
// When no gradient is needed the attention matrices are not retained.
template <typename T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, T scale = T{1}) {
  require_rank(q.shape(), 3, "attention_core Q");
  require_rank(k.shape(), 3, "attention_core K");
  require_rank(v.shape(), 3, "attention_core V");
  const std::int64_t G = q.dim(0), Nq = q.dim(1), C = q.dim(2), Nk = k.dim(1);
  if (k.dim(0) != G || v.dim(0) != G || k.dim(2) != C || v.dim(2) != C || v.dim(1) != Nk) {
    throw ValidationError("attention_core: incompatible shapes Q" + shape_str(q.shape()) + " K" +
                          shape_str(k.shape()) + " V" + shape_str(v.shape()));
  }
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Tensor<T> out({G, Nq, C});
  Tensor<T> probs;
  if (keep) probs = Tensor<T>({G, Nq, Nk});
  std::vector<T> scratch(keep ? 0 : static_cast<std::size_t>(Nq * Nk));
  for (std::int64_t g = 0; g < G; ++g) {
    T* a = keep ? probs.data() + g * Nq * Nk : scratch.data();
    blas::gemm(false, true, Nq, Nk, C, scale, q.value().data() + g * Nq * C, C,
               k.value().data() + g * Nk * C, C, T{0}, a, Nk);
    for (std::int64_t i = 0; i < Nq; ++i) {
      T* row = a + i * Nk;
      const T mx = *std::max_element(row, row + Nk);
      T sum{0};
      for (std::int64_t j = 0; j < Nk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T{1} / sum;
      for (std::int64_t j = 0; j < Nk; ++j) row[j] *= inv;
    }
    blas::gemm(false, false, Nq, C, Nk, T{1}, a, Nk, v.value().data() + g * Nk * C, C, T{0},
               out.data() + g * Nq * C, C);
  }
  return Var<T>::make(std::move(out), {q, k, v},
                      [probs = std::move(probs), G, Nq, Nk, C, scale](Node<T>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    T* gq = pq.requires_grad ? pq.grad_buffer() : nullptr;
    T* gk = pk.requires_grad ? pk.grad_buffer() : nullptr;
    T* gv = pv.requires_grad ? pv.grad_buffer() : nullptr;
    std::vector<T> da(static_cast<std::size_t>(Nq * Nk));
    for (std::int64_t g = 0; g < G; ++g) {
      const T* a = probs.data() + g * Nq * Nk;
      const T* go = self.grad.data() + g * Nq * C;
      if (gv) blas::gemm(true, false, Nk, C, Nq, T{1}, a, Nk, go, C, T{1}, gv + g * Nk * C, C);
      if (!gq && !gk) continue;
      blas::gemm(false, true, Nq, Nk, C, T{1}, go, C, pv.value.data() + g * Nk * C, C, T{0},
                 da.data(), Nk);
      for (std::int64_t i = 0; i < Nq; ++i) {
        T* d = da.data() + i * Nk;
        const T* ar = a + i * Nk;
        T dot{0};
        for (std::int64_t j = 0; j < Nk; ++j) dot += d[j] * ar[j];
        for (std::int64_t j = 0; j < Nk; ++j) d[j] = ar[j] * (d[j] - dot);
      }
      if (gq) blas::gemm(false, false, Nq, C, Nk, scale, da.data(), Nk,
                         pk.value.data() + g * Nk * C, C, T{1}, gq + g * Nq * C, C);
      if (gk) blas::gemm(true, false, Nk, C, Nq, scale, da.data(), Nk,
                         pq.value.data() + g * Nq * C, C, T{1}, gk + g * Nk * C, C);
    }
  });
}

// Reflect padding (edge sample not repeated) on the bottom and right.
// Pads longer than the extent keep mirroring periodically.
template <typename T>
Var<T> reflect_pad(const Var<T>& x, std::int64_t pad_bottom, std::int64_t pad_right) {
  require_rank(x.shape(), 4, "reflect_pad");
  if (pad_bottom < 0 || pad_right < 0) throw ValidationError("reflect_pad: negative pad");
  if (pad_bottom == 0 && pad_right == 0) return x;
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = H + pad_bottom, Wo = W + pad_right;
  auto reflect = [](std::int64_t i, std::int64_t n) {
    if (n == 1) return std::int64_t{0};
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  std::vector<std::int64_t> src(static_cast<std::size_t>(Ho * Wo));
  for (std::int64_t y = 0; y < Ho; ++y) {
    for (std::int64_t xx = 0; xx < Wo; ++xx) src[y * Wo + xx] = reflect(y, H) * W + reflect(xx, W);
  }
  Tensor<T> out({N, C, Ho, Wo});
  for (std::int64_t p = 0; p < N * C; ++p) {
    const T* in = x.value().data() + p * H * W;
    T* o = out.data() + p * Ho * Wo;
    for (std::size_t i = 0; i < src.size(); ++i) o[i] = in[src[i]];
  }
  return Var<T>::make(std::move(out), {x}, [src = std::move(src), N, C, H, W, Ho, Wo](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::int64_t p = 0; p < N * C; ++p) {
      const T* go = self.grad.data() + p * Ho * Wo;
      T* gi = g + p * H * W;
      for (std::size_t i = 0; i < src.size(); ++i) gi[src[i]] += go[i];
    }
  });
}

// Spatial window [y0, y0 + h) x [x0, x0 + w) of an NCHW map.
template <typename T>
Var<T> crop(const Var<T>& x, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  require_rank(x.shape(), 4, "crop");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > H || x0 + w > W) {
    throw ValidationError("crop window out of bounds for " + shape_str(x.shape()));
  }
  if (y0 == 0 && x0 == 0 && h == H && w == W) return x;
  Tensor<T> out({N, C, h, w});
  for (std::int64_t p = 0; p < N * C; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      const T* src = x.value().data() + (p * H + y0 + y) * W + x0;
      std::copy(src, src + w, out.data() + (p * h + y) * w);
    }
  }
  return Var<T>::make(std::move(out), {x}, [N, C, H, W, y0, x0, h, w](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::int64_t p = 0; p < N * C; ++p) {
      for (std::int64_t y = 0; y < h; ++y) {
        const T* src = self.grad.data() + (p * h + y) * w;
        T* dst = g + (p * H + y0 + y) * W + x0;
        for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
      }
    }
  });
}

// mean(|x - target|) as a scalar of shape (1).
template <typename T>
Var<T> l1_mean(const Var<T>& x, const Tensor<T>& target) {
  detail::require_same(x.shape(), target.shape(), "l1_mean");
  if (target.empty()) throw ValidationError("l1_mean: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) acc += std::abs(static_cast<double>(x.value()[i]) - target[i]);
  const auto n = static_cast<double>(target.size());
  Tensor<T> out({1}, static_cast<T>(acc / n));
  return Var<T>::make(std::move(out), {x}, [target, n](Node<T>& self) {
    auto& px = *self.parents[0];
    T* g = px.grad_buffer();
    const T s = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const T d = px.value[i] - target[i];
      g[i] += d > T{0} ? s : (d < T{0} ? -s : T{0});
    }
  });
}

// sum(x * weights) as a scalar; used to project outputs for gradient checks.
template <typename T>
Var<T> dot(const Var<T>& x, const Tensor<T>& weights) {
  detail::require_same(x.shape(), weights.shape(), "dot");
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  return Var<T>::make(Tensor<T>({1}, acc), {x}, [weights](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < weights.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

}  // namespace stereoqe::ops
