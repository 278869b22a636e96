#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mrb {

/// Base class for data errors raised by the library (bad input files,
/// inconsistent shapes, violated preconditions on user data).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A malformed input record. Line and column are 1-based; column is 0 when
/// unknown.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::size_t column, const std::string& what);

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::string source_;
  std::size_t line_;
  std::size_t column_;
};

}  // namespace mrb
