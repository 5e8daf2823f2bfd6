#pragma once

#include <stdexcept>
#include <string>

namespace vdist {

/// Raised when a model, distribution or config violates its invariants.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by numerical routines whose result fails a post-condition check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when exact atom propagation would exceed the configured atom cap.
class AtomLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& what) { throw ValidationError(what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(what);
}

inline void require(bool condition, const char* what) {
  if (!condition) fail(what);
}

}  // namespace detail
}  // namespace vdist
