#pragma once

#include <stdexcept>
#include <string>

namespace tract {

// Error taxonomy used across the library:
//   ConfigError   - invalid configuration or operand shapes
//   DataError     - malformed or inconsistent input data
//   ContractError - API misuse (precondition violated by the caller)
//   TrainError    - runtime failure inside a training loop
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tract
