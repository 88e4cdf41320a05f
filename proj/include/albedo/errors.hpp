// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace albedo {

/// Malformed or out-of-range experiment configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Input data that does not match the grids or provenance it claims.
class DataMismatch : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A requested allocation would exceed the configured memory budget.
class BudgetExceeded : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace albedo
