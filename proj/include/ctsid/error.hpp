#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctsid {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Raised when a rollout produces a non-finite state. `step()` is the grid index
// (relative to the start of the rolled-out sequence) where it was first seen.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& where)
      : Error("non-finite state at step " + std::to_string(step) + " (" + where + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

namespace detail {

inline void require_dims(bool ok, const char* what) {
  if (!ok) throw DimensionError(std::string("dimension mismatch: ") + what);
}

}  // namespace detail
}  // namespace ctsid
