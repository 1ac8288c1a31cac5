#pragma once

#include <stdexcept>
#include <string>

namespace idn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Feature files, manifests, score tables or windows that cannot be used.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or failed numerical checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint container could not be read or does not match its config.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace idn
