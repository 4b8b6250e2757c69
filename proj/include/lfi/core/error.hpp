#pragma once

#include <stdexcept>
#include <string>

namespace lfi {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf, failed to converge, or left its domain of validity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace lfi
