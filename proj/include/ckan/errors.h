#pragma once

#include <stdexcept>
#include <string>

namespace ckan {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (bad geometry, divisibility, unknown
// keys). The CLI maps this family to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Tensor shapes that do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Checkpoint that cannot be loaded into the current model (version, hash or
// layout mismatch).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ckan
