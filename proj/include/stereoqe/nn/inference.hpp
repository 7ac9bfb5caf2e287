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
#include <utility>
#include <vector>

#include "stereoqe/core/autograd.hpp"
#include "stereoqe/image/raster.hpp"
#include "stereoqe/nn/model.hpp"

namespace stereoqe::nn {

struct InferenceOptions {
  // Rows per vertical tile; 0 picks a size from the image width, negative
  // disables tiling.
  int tile_rows = 0;
  int tile_overlap = 16;
};

// Tile height keeping about 2^18 pixels per view in flight, rounded to 16.
inline int auto_tile_rows(int height, int width) {
  const int rows = std::max(32, (262144 / std::max(width, 1)) / 16 * 16);
  return rows >= height ? -1 : rows;
}

namespace detail {

inline std::pair<Raster, Raster> enhance_whole(const Raster& left, const Raster& right, const Scope<float>& w,
                                               const ArchitectureConfig& a) {
  const Var<float> l(raster_to_tensor<float>(left)), r(raster_to_tensor<float>(right));
  const auto [el, er] = forward(l, r, w, a);
  return {tensor_to_raster(el.value()), tensor_to_raster(er.value())};
}

}  // namespace detail

// Enhances an 8-bit stereo pair. Large frames are processed in full-width
// horizontal bands whose overlaps are blended with linear ramps.
inline std::pair<Raster, Raster> enhance(const Raster& left, const Raster& right, const ModelWeights<float>& weights,
                                         const InferenceOptions& opt = {}) {
  require_same_dims(left, right, "enhance: left " + left.dims() + " vs right " + right.dims());
  NoGradGuard no_grad;
  const ParamSet<float> params(weights, false);
  const Scope<float> w(params);
  const int H = left.height, W = left.width;
  int tile = opt.tile_rows == 0 ? auto_tile_rows(H, W) : opt.tile_rows;
  const int overlap = std::max(0, opt.tile_overlap);
  if (tile < 0 || tile >= H || tile <= overlap) return detail::enhance_whole(left, right, w, weights.arch);

  std::vector<int> starts;
  for (int s = 0;; s += tile - overlap) {
    if (s + tile >= H) {
      starts.push_back(std::max(0, H - tile));
      break;
    }
    starts.push_back(s);
  }
  std::vector<double> acc_l(static_cast<std::size_t>(H) * W * 3, 0.0), acc_r(acc_l.size(), 0.0);
  std::vector<double> weight(static_cast<std::size_t>(H), 0.0);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const int s = starts[i];
    const int h = std::min(tile, H - s);
    const auto [el, er] = detail::enhance_whole(crop_raster(left, s, 0, h, W), crop_raster(right, s, 0, h, W), w,
                                                weights.arch);
    const int lo_ramp = i == 0 ? 0 : std::min(overlap, starts[i - 1] + tile - s);
    const int hi_ramp = i + 1 == starts.size() ? 0 : std::min(overlap, s + h - starts[i + 1]);
    for (int y = 0; y < h; ++y) {
      double wt = 1.0;
      if (lo_ramp > 0 && y < lo_ramp) wt = (y + 1.0) / (lo_ramp + 1.0);
      if (hi_ramp > 0 && y >= h - hi_ramp) wt = std::min(wt, (h - y) / (hi_ramp + 1.0));
      weight[static_cast<std::size_t>(s + y)] += wt;
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c) {
          const std::size_t idx = (static_cast<std::size_t>(s + y) * W + x) * 3 + c;
          acc_l[idx] += wt * el.at(y, x, c);
          acc_r[idx] += wt * er.at(y, x, c);
        }
      }
    }
  }
  Raster out_l(H, W), out_r(H, W);
  for (int y = 0; y < H; ++y) {
    for (std::size_t j = 0; j < static_cast<std::size_t>(W) * 3; ++j) {
      const std::size_t idx = static_cast<std::size_t>(y) * W * 3 + j;
      out_l.pixels[idx] = static_cast<std::uint8_t>(std::clamp(std::lround(acc_l[idx] / weight[y]), 0L, 255L));
      out_r.pixels[idx] = static_cast<std::uint8_t>(std::clamp(std::lround(acc_r[idx] / weight[y]), 0L, 255L));
    }
  }
  return {std::move(out_l), std::move(out_r)};
}

}  // namespace stereoqe::nn
