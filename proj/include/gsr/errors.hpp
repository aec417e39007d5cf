#pragma once

#include <stdexcept>
#include <string>

namespace gsr {

// Error classes map onto the CLI exit codes documented in the help text:
// data 2, config 3, numeric 4, compatibility 5.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CompatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int data = 2;
inline constexpr int config = 3;
inline constexpr int numeric = 4;
inline constexpr int compat = 5;
}  // namespace exit_code

}  // namespace gsr
