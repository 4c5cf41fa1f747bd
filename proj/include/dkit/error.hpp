#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>

namespace dkit {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate a precondition (sizes, ranges, flags).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File opened but its contents do not match the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared in inputs, outputs or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Iterative procedure blew up. `step` is the iteration where it was detected.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

enum class PluginFailure { protocol, process_exit, timeout, dimension_mismatch };

inline const char* to_string(PluginFailure f) {
  switch (f) {
    case PluginFailure::protocol: return "protocol violation";
    case PluginFailure::process_exit: return "plugin process exited";
    case PluginFailure::timeout: return "plugin timed out";
    case PluginFailure::dimension_mismatch: return "dimension mismatch";
  }
  return "plugin failure";
}

class PluginError : public Error {
 public:
  PluginError(PluginFailure kind, const std::string& detail)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
  PluginFailure kind() const noexcept { return kind_; }

 private:
  PluginFailure kind_;
};

// Failure inside a multi-step procedure (sampling, sweeps) annotated with
// where it happened. The original message is kept in what(); when built
// inside a catch block the original exception is kept in cause().
class StepError : public Error {
 public:
  StepError(const std::string& where, const std::string& inner,
            std::exception_ptr cause = std::current_exception())
      : Error(where + ": " + inner), cause_(std::move(cause)) {}
  const std::exception_ptr& cause() const noexcept { return cause_; }

 private:
  std::exception_ptr cause_;
};

}  // namespace dkit
