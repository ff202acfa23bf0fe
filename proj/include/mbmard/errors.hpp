#pragma once
#include <stdexcept>
#include <string>

namespace mbmard {

// Malformed or unusable input: bad CSV, constant channels, missing traces.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: non-finite likelihood, non-positive-definite spectra.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mbmard
