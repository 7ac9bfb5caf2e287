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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/tensor.hpp"

namespace stereoqe {

// Interleaved 8-bit RGB image, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  Raster() = default;
  Raster(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 0 || w < 0) throw ValidationError("negative raster extent");
  }

  bool empty() const noexcept { return pixels.empty(); }
  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::string dims() const { return std::to_string(height) + "x" + std::to_string(width); }

  friend bool operator==(const Raster&, const Raster&) = default;
};

inline void require_same_dims(const Raster& a, const Raster& b, const std::string& what) {
  if (a.height != b.height || a.width != b.width) {
    throw ValidationError(what + ": dimension mismatch " + a.dims() + " vs " + b.dims());
  }
}

inline Raster crop_raster(const Raster& src, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > src.height || x0 + w > src.width) {
    throw ValidationError("crop " + std::to_string(h) + "x" + std::to_string(w) + "@(" +
                          std::to_string(x0) + "," + std::to_string(y0) + ") exceeds " + src.dims());
  }
  Raster out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* s = &src.pixels[(static_cast<std::size_t>(y0 + y) * src.width + x0) * 3];
    std::copy(s, s + static_cast<std::size_t>(w) * 3, &out.pixels[static_cast<std::size_t>(y) * w * 3]);
  }
  return out;
}

// BT.601 luma in [0, 255], one value per pixel.
inline std::vector<double> luma(const Raster& r) {
  std::vector<double> y(static_cast<std::size_t>(r.height) * r.width);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.299 * r.pixels[3 * i] + 0.587 * r.pixels[3 * i + 1] + 0.114 * r.pixels[3 * i + 2];
  }
  return y;
}

// Writes one raster into item `n` of an (N, 3, H, W) tensor, scaled to [0, 1].
template <typename T>
void raster_into_tensor(const Raster& r, Tensor<T>& t, std::int64_t n) {
  const std::int64_t H = r.height, W = r.width;
  if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != H || t.dim(3) != W || n >= t.dim(0)) {
    throw ValidationError("raster " + r.dims() + " does not fit tensor " + shape_str(t.shape()));
  }
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) t.at(n, c, y, x) = static_cast<T>(r.at(y, x, c)) / T{255};
    }
  }
}

template <typename T>
Tensor<T> raster_to_tensor(const Raster& r) {
  Tensor<T> t({1, 3, r.height, r.width});
  raster_into_tensor(r, t, 0);
  return t;
}

// Item `n` of an (N, 3, H, W) tensor in [0, 1] back to 8-bit, clamped and rounded.
template <typename T>
Raster tensor_to_raster(const Tensor<T>& t, std::int64_t n = 0) {
  require_rank(t.shape(), 4, "tensor_to_raster");
  if (t.dim(1) != 3) throw ValidationError("tensor_to_raster: expected 3 channels, got " + shape_str(t.shape()));
  Raster r(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)));
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(t.at(n, c, y, x)), 0.0, 1.0);
        r.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return r;
}

}  // namespace stereoqe
