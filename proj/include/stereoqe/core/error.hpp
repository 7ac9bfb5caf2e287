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

#include <stdexcept>
#include <string>

namespace stereoqe {

// Error categories map one-to-one onto the CLI exit codes.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kIo = 2,
  kDivergence = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kValidation; }
};

// Bad shapes, bad arguments, precondition violations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (qf out of range, bins < 2, ...).
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Structural problems with a dataset or manifest.
class DatasetError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

// Raised when training produces a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDivergence; }
};

}  // namespace stereoqe
