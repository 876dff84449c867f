#pragma once

#include <stdexcept>
#include <string>

namespace hsnerf {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incoherent or invalid configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, missing or inconsistent input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or other numerical breakdown (CLI exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace hsnerf
