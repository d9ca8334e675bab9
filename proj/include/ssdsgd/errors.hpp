// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ssdsgd {

/// Rejected configuration or argument. `field()` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Violation of the push/pull protocol, e.g. a duplicate push or a payload of
/// the wrong length. Always a bug in the caller, never a transient condition.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Failure while a run is in progress (timeouts, closed channels, I/O).
class RuntimeFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssdsgd
