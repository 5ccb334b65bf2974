#pragma once

#include <stdexcept>
#include <string>

namespace cpn {

/// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kUsage,    // bad arguments or configuration
  kData,     // missing, malformed or inconsistent input data
  kNumeric,  // non-finite values, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Shape or argument contract violated by a caller.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

}  // namespace cpn
