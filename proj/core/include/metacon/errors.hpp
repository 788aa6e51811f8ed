#pragma once

#include <stdexcept>
#include <string>

namespace metacon {

/// A caller broke a documented precondition (shape mismatch, empty input, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input is well-formed but mathematically degenerate (zero-norm vector, ...).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The requested combination of settings has no implementation.
class UnsupportedConfiguration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric routine produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration text failed to parse or validate. `field()` names the key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

#define METACON_REQUIRE(cond, msg)                      \
  do {                                                  \
    if (!(cond)) throw ::metacon::ContractViolation(msg); \
  } while (0)

}  // namespace metacon
