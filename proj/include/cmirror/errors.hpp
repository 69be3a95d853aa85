#pragma once

#include <stdexcept>
#include <string>

namespace cmirror {

/// Bad input: malformed files, dimension mismatches, config errors. CLI exit code 2.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during a computation (non-finite loss, degenerate fit). CLI exit code 1.
class ComputeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace cmirror
