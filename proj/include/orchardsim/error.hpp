#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

/// Root of all errors raised by the library. `category()` is a stable,
/// machine-parsable token used by the command-line front end.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

/// Bad argument or parameter combination (config-class failure).
class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

/// Malformed file content. Messages carry the record and byte offset.
class ParseError : public IoError {
 public:
  using IoError::IoError;
  const char* category() const noexcept override { return "parse"; }
};

/// Generation could not satisfy its constraints (e.g. branch layout).
class InfeasibleError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "infeasible"; }
};

/// Ground truth and prediction do not describe the same cloud.
class EvalMismatchError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "eval_mismatch"; }
};

}  // namespace orchard
