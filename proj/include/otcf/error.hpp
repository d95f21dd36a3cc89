#pragma once

#include <stdexcept>
#include <string>

namespace otcf {

/// Failure category. The CLI maps these onto its exit codes.
enum class ErrorKind {
  validation,      // bad input, bad flags, contract violation
  numerical,       // a self-check or solver invariant failed
  resource_guard,  // instance too large without an explicit override
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::validation, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::numerical, what) {}
};

class ResourceGuardError : public Error {
 public:
  explicit ResourceGuardError(const std::string& what)
      : Error(ErrorKind::resource_guard, what) {}
};

}  // namespace otcf
