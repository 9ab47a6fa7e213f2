#pragma once

#include <stdexcept>
#include <string>

namespace dmba {

// Base of every error thrown by the library. Callers that only need to
// distinguish "bad input" from "numerical failure" can catch the two
// intermediate classes below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: shapes, contracts, malformed files, invalid configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptySelectionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Numerical failure during computation.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class SingularityError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

// Training produced a non-finite loss.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(const std::string& what, int last_finite_epoch)
      : RuntimeFailure(what), last_finite_epoch_(last_finite_epoch) {}

  // 0 when the very first loss was already non-finite.
  int last_finite_epoch() const { return last_finite_epoch_; }

 private:
  int last_finite_epoch_;
};

}  // namespace dmba
