#pragma once

#include <stdexcept>
#include <string>

namespace sphereat {

/// A caller broke a documented precondition (shape, label range, mode).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or consumed a non-finite or degenerate value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries the byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sphereat
