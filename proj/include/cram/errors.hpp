#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cram {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A shape rule was violated (operand shapes, tensor/mask layouts, N:M divisibility).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a place where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid user input: labels out of range, bad spec strings, malformed configs.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A function assumed deterministic returned different values for identical inputs.
class DeterminismError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace cram
