#pragma once

#include <stdexcept>
#include <string>

namespace noisetrans {

// Every failure raised by the library derives from Error. The CLI maps the
// category onto its exit code (argument = 2, data/format = 3, numeric = 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Shape/dimension mismatch between tensor operands.
class DimensionError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

class IndexError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// Violated caller contract (wrong config, uncovered point, non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Input geometry without extent (zero scale, zero area).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace noisetrans
