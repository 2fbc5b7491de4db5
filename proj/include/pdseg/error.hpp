#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdseg {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle itself is unreliable (e.g. non-deterministic function).
class OracleError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace pdseg
