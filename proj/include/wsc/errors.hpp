#pragma once

#include <stdexcept>
#include <string>

namespace wsc {

/// Malformed input: bad labels, dimension mismatches, invalid options.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inference produced a non-finite quantity and was aborted.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wsc
