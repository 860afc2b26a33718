#pragma once

#include <stdexcept>
#include <string>

namespace weatherseg {

// Every error carries a short machine-parsable code; the CLI prints it verbatim
// and maps the category onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("SHAPE", message) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message) : Error("CONTRACT", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("CONFIG", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("IO", message) {}
};

// Raised when a loss component turns non-finite during training.
class NumericError : public Error {
 public:
  NumericError(std::string component, const std::string& message)
      : Error("NUMERIC", message), component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

}  // namespace weatherseg
