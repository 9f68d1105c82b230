#pragma once

#include <stdexcept>
#include <string>

namespace nilm {

/// Bad input data: malformed files, violated preconditions on recordings,
/// labels or feature matrices.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or command-line usage. `field` carries the
/// dotted path of the offending config entry when there is one.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)),
        message_(message) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

/// Conflicting concurrent edit in the annotation store.
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nilm
