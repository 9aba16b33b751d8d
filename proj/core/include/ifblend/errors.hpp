#pragma once

#include <stdexcept>
#include <string>

namespace ifblend {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor rank or channel count does not match an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Spatial extent violates a divisibility or minimum-size requirement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data failed validation (unpaired files, non-binary masks, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol cannot run on the given data.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Model stages were connected inconsistently.
class WiringError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training stopped on a non-finite loss.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace ifblend
