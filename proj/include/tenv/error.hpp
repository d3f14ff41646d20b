#pragma once

#include <stdexcept>
#include <string>

namespace tenv {

/// Base of every error raised by the library. Exit codes of the CLI map onto
/// the subclasses below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, rank or argument mismatch in a call.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file, invalid configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Singular, non-positive-definite or otherwise failed numerical step.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tenv
