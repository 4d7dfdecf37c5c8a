// Copyright (c) 2026 The cellmnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cellmnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An eigenvector basis is too close to singular to be inverted.
class SingularBasisError : public Error {
 public:
  SingularBasisError(const std::string& what, double det)
      : Error(what), det_(det) {}
  double det() const noexcept { return det_; }

 private:
  double det_;
};

/// Malformed input file. `line()` is 1-based; 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Invalid configuration or precondition violated by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cellmnn
