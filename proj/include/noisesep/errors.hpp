// Copyright 2026 The noisesep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace noisesep {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values (durations, frequencies, counts, ...).
class ParamError : public Error {
 public:
  using Error::Error;
};

// Tensor shape incompatibility; message names the primitive and dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated API contract (non-scalar loss, count mismatch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Inputs that are structurally valid but degenerate (all-zero reference, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Unparseable or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad configuration (unknown keys, inconsistent settings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisesep
