#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grover {

// Base of every error the library raises. Callers that only care about
// "something went wrong" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied data: out-of-range ids or labels, empty corpora, etc.
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or inconsistent shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition of an operation.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradients.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// A checkpoint whose manifest does not match its contents or the current run.
class ManifestMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace grover
