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

// Procedural rectified stereo scenes: fractal regolith with scattered rocks
// under a reddish palette. Used to build demo corpora and test fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "stereoqe/core/error.hpp"
#include "stereoqe/core/rng.hpp"
#include "stereoqe/image/raster.hpp"

namespace stereoqe::synthetic {

struct SceneOptions {
  int height = 144;
  int width = 192;
  std::uint64_t seed = 1;
  // Horizontal disparity in pixels at the top and bottom rows; a ground plane
  // has disparity growing toward the bottom of the frame.
  double disparity_top = 4.0;
  double disparity_bottom = 4.0;
  int rocks = 12;
  // Pixels per scene unit; larger values image the same terrain at finer
  // ground resolution, giving smoother views.
  double zoom = 1.0;
};

namespace detail {

inline double lattice(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(x) * 0x9E3779B1ull ^
                                             (static_cast<std::uint64_t>(y) << 32));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = x - fx, ty = y - fy;
  const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a + (b - a) * sx) * (1 - sy) + (c + (d - c) * sx) * sy;
}

inline double fractal(std::uint64_t seed, double x, double y, int octaves, double base_scale) {
  double sum = 0, amp = 1, norm = 0, scale = base_scale;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(seed + static_cast<std::uint64_t>(o) * 7919, x / scale, y / scale);
    norm += amp;
    amp *= 0.55;
    scale *= 0.5;
  }
  return sum / norm;
}

struct Rock {
  double cx, cy, rx, ry, shade;
};

}  // namespace detail

// Scene radiance in [0, 1]^3 at continuous scene coordinates.
class Scene {
 public:
  explicit Scene(const SceneOptions& opt) : opt_(opt) {
    Rng rng(mix_seed(opt.seed, 17));
    for (int i = 0; i < opt.rocks; ++i) {
      rocks_.push_back({rng.uniform(0, opt.width / opt.zoom + 16.0), rng.uniform(0, opt.height / opt.zoom),
                        rng.uniform(4, 14), rng.uniform(3, 9), rng.uniform(0.6, 1.3)});
    }
  }

  void radiance(double x, double y, double rgb[3]) const {
    const std::uint64_t s = opt_.seed;
    const double h = detail::fractal(s, x, y, 5, 48.0);
    const double hx = detail::fractal(s, x + 1.0, y, 5, 48.0);
    const double grit = detail::fractal(s + 101, x, y, 3, 3.0);
    double albedo = 0.35 + 0.45 * h + 0.12 * (grit - 0.5);
    double shade = 1.0 + 6.0 * (hx - h);
    for (const auto& r : rocks_) {
      const double dx = (x - r.cx) / r.rx, dy = (y - r.cy) / r.ry;
      const double d2 = dx * dx + dy * dy;
      if (d2 < 1.0) {
        albedo = 0.25 + 0.25 * r.shade + 0.1 * grit;
        shade = 0.7 + 0.5 * std::sqrt(1.0 - d2) - 0.25 * dx;
      } else if (d2 < 1.6 && dx > 0) {
        shade *= 0.75;  // cast shadow
      }
    }
    const double v = std::clamp(albedo * shade, 0.0, 1.0);
    rgb[0] = std::clamp(0.18 + 0.78 * v, 0.0, 1.0);
    rgb[1] = std::clamp(0.10 + 0.55 * v, 0.0, 1.0);
    rgb[2] = std::clamp(0.06 + 0.38 * v, 0.0, 1.0);
  }

 private:
  SceneOptions opt_;
  std::vector<detail::Rock> rocks_;
};

inline double disparity_at(const SceneOptions& opt, int y) {
  const double t = opt.height > 1 ? static_cast<double>(y) / (opt.height - 1) : 0.0;
  return opt.disparity_top + (opt.disparity_bottom - opt.disparity_top) * t;
}

// Renders the left view at scene x and the right view at scene x + disparity,
// so a scene point at left column u appears at right column u - d.
inline std::pair<Raster, Raster> render_pair(const SceneOptions& opt) {
  if (!(opt.zoom > 0.0)) throw ValidationError("scene zoom must be positive");
  Scene scene(opt);
  Raster left(opt.height, opt.width), right(opt.height, opt.width);
  double rgb[3];
  for (int y = 0; y < opt.height; ++y) {
    const double d = disparity_at(opt, y);
    const double sy = y / opt.zoom;
    for (int x = 0; x < opt.width; ++x) {
      scene.radiance(x / opt.zoom, sy, rgb);
      for (int c = 0; c < 3; ++c) left.at(y, x, c) = static_cast<std::uint8_t>(std::lround(rgb[c] * 255));
      scene.radiance((x + d) / opt.zoom, sy, rgb);
      for (int c = 0; c < 3; ++c) right.at(y, x, c) = static_cast<std::uint8_t>(std::lround(rgb[c] * 255));
    }
  }
  return {std::move(left), std::move(right)};
}

}  // namespace stereoqe::synthetic
