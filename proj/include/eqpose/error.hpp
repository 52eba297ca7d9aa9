#pragma once

#include <stdexcept>
#include <string>

namespace eqpose {

// Violated precondition or invariant of a library operation.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/unwritable files, malformed on-disk data.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad run configuration (unknown key, missing key, unparsable value).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void contract(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace eqpose
