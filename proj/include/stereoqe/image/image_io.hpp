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

#include <cctype>
#include <filesystem>
#include <string>

#include "stereoqe/image/jpeg_codec.hpp"
#include "stereoqe/image/png_io.hpp"

namespace stereoqe {

// Dispatches on extension: .jpg/.jpeg through libjpeg, everything else PNG.
inline Raster read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such image: " + path.string());
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return jpeg::read(path);
  return png::read(path);
}

inline void write_image(const std::filesystem::path& path, const Raster& r) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") {
    jpeg::write_bytes(path, jpeg::encode(r, 95));
  } else {
    png::write(path, r);
  }
}

}  // namespace stereoqe
