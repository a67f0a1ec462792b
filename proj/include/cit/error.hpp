#pragma once

#include <stdexcept>
#include <string>

namespace cit {

// The CLI maps each category to its own exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct FitError : Error {
  using Error::Error;
};

}  // namespace cit
