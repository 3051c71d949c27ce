#pragma once

#include <stdexcept>
#include <string>

namespace wacnn {

/// Base class for every error this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between tensors / matrices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown keys, invalid names, contract violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: file formats, out-of-range labels, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure: NaN inputs, diverged loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace wacnn
