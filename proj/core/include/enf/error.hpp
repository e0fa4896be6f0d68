#pragma once

#include <stdexcept>
#include <string>

namespace enf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not agree (matmul inner dims, elementwise operands, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in the output of an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Group elements / poses / latent sets of incompatible kinds were combined.
class KindMismatchError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or otherwise unreadable file or payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle itself is unusable (non-deterministic f).
class OracleInvalidError : public Error {
 public:
  using Error::Error;
};

}  // namespace enf
