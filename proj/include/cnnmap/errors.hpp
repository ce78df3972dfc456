#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cnnmap {

/// Base class for every error raised by the library. The CLI maps these to
/// exit code 2 (data/format error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input. `offset()` is a byte offset for binary formats or a
/// 1-based line number for text formats (see `unit()`).
class ParseError : public Error {
 public:
  enum class Unit { byte, line, none };

  ParseError(const std::string& what, std::size_t offset, Unit unit)
      : Error(what), offset_(offset), unit_(unit) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t offset() const { return offset_; }
  Unit unit() const { return unit_; }

 private:
  std::size_t offset_ = 0;
  Unit unit_ = Unit::none;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class InvalidPoseError : public Error {
 public:
  using Error::Error;
};

class InvalidRotationError : public Error {
 public:
  InvalidRotationError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class DatasetLayoutError : public Error {
 public:
  using Error::Error;
};

class MissingModalityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cnnmap
