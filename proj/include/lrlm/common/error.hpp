// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lrlm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, argument, or usage contract violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numeric failure (NaN/Inf, non-convergence). Carries the tensor or op name.
class NumericError : public Error {
 public:
  NumericError(std::string subject, const std::string& what)
      : Error(subject + ": " + what), subject_(std::move(subject)) {}

  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

/// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace lrlm
