#pragma once

#include <stdexcept>
#include <string>

namespace agediff {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or dimension bounds.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

// Bad argument value (out of range, invalid enum, ...).
struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error("value: " + msg) {}
};

// NaN/Inf detected. Never silently propagated.
struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error("non-finite: " + msg) {}
};

// File and serialization failures.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

// Configuration parse/validation failures.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Training aborted (NaN loss, missing prerequisites, ...).
struct TrainError : Error {
  explicit TrainError(const std::string& msg) : Error("train: " + msg) {}
};

}  // namespace agediff
