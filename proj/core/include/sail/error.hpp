#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sail {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, shape mismatches, out-of-range arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Input is valid in general but degenerate for the requested transform
/// (constant vector for min-max / z-score, zero vector for l2).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  explicit NumericalFailure(const std::string& what) : Error(what), step_(-1) {}

  /// Adaptation step at which the failure surfaced, or -1 when unknown.
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class PretrainFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace sail
