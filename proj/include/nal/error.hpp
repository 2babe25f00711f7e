#pragma once

#include <stdexcept>
#include <string>

namespace nal {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity escaped a numeric operation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Inner ascent produced a non-finite iterate.
class AscentDivergenceError : public Error {
 public:
  AscentDivergenceError(int iteration, const std::string& what)
      : Error("ascent diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

/// Outer training loss became non-finite.
class TrainingDivergenceError : public Error {
 public:
  TrainingDivergenceError(int epoch, int batch)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Attack-strength bisection could not bracket the requested transport cost.
class MatchingError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nal
