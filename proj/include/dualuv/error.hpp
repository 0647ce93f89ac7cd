#pragma once

#include <stdexcept>
#include <string>

namespace dualuv {

/// Invalid arguments or violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File and format failures (bad magic, truncated payload, missing file).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, degenerate geometry detected mid-computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Writes a warning line to stderr unless warnings are silenced.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);
bool warnings_enabled();

}  // namespace dualuv
