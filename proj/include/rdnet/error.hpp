#pragma once

#include <stdexcept>
#include <string>

namespace rdnet {

// Every error the library raises derives from Error so the CLI can map it to a
// one-line diagnostic. kind() is the stable machine-readable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error("value", message) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& message) : Error("non_finite", message) {}
};

class InvertibilityError : public Error {
 public:
  explicit InvertibilityError(const std::string& message) : Error("invertibility", message) {}
};

class DegenerateFitError : public Error {
 public:
  explicit DegenerateFitError(const std::string& message) : Error("degenerate_fit", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

}  // namespace rdnet
