#pragma once

#include <stdexcept>
#include <string>

namespace cbpnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, zero vectors where a direction is required, divergence.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, unsupported version, malformed text formats.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Truncated payloads or checksum mismatches.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbpnet
