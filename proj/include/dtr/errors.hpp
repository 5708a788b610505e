#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtr {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument lies outside the mathematical domain of an operation
// (log of a non-positive value, division by zero, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Misuse of the differentiation tape: non-scalar loss, replayed tape, ...
class GradientError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity appeared where only finite values are allowed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A precondition on the arguments of a library call does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A file could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : what + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// An upstream artifact is missing, unreadable or belongs to another config.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtr
