#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advbench {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scene, tracker, or attack configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: mismatched shapes, foreign recordings, empty inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Operation evaluated outside its numeric domain, or a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CropError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; carries the step at which the loss became non-finite.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace advbench
