#pragma once

#include <stdexcept>
#include <string>

namespace mexit {

// Bad arguments, shapes, ranges, unknown names. CLI maps this to exit code 2.
class invalid_input : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated files (datasets, traces, checkpoints).
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite math was required. CLI maps this to exit code 3.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mexit
