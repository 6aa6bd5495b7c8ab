#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prism {

/// Bad or inconsistent user input (maps to CLI exit code 1).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a result (CLI exit code 2).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the Monte Carlo truth oracle when a rule selects nobody.
class EmptyCellError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Error thrown by one pipeline stage, carrying the stage label.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, bool numeric)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), numeric_(numeric) {}

  const std::string& stage() const noexcept { return stage_; }
  bool numeric() const noexcept { return numeric_; }

 private:
  std::string stage_;
  bool numeric_;
};

}  // namespace prism
