// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace drill {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A label id or token id is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, dimensions or config file contents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. running backward twice on one tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in an op output.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle's preconditions do not hold.
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Corpus problems: empty input, too-short streams, misaligned losses.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or incompatible checkpoint.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace drill
