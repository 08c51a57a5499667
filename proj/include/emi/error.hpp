#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace emi {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing files, malformed manifests, rejected samples.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Binary container is malformed; carries the byte offset of the failure.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace emi
