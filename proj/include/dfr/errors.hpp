#pragma once

#include <stdexcept>
#include <string>

namespace dfr {

// Base for every error raised by the library. `kind()` is a short stable tag
// used by the CLI when printing machine-parsable failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

// A documented precondition between calls was broken (stale cache etc.).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace dfr
