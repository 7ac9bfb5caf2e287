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

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace stereoqe::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

// Level from MARSSQE_LOG (error | info | debug); info when unset or unknown.
inline Level level_from_env() {
  const char* v = std::getenv("MARSSQE_LOG");
  if (!v) return Level::kInfo;
  const std::string_view s(v);
  if (s == "error") return Level::kError;
  if (s == "debug") return Level::kDebug;
  return Level::kInfo;
}

inline Level& threshold() {
  static Level level = level_from_env();
  return level;
}

inline void write(Level level, std::string_view tag, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

inline void error(const std::string& msg) { write(Level::kError, "error", msg); }
inline void warn(const std::string& msg) { write(Level::kInfo, "warn", msg); }
inline void info(const std::string& msg) { write(Level::kInfo, "info", msg); }
inline void debug(const std::string& msg) { write(Level::kDebug, "debug", msg); }

}  // namespace stereoqe::log
