#pragma once

#include <stdexcept>
#include <string>

namespace todnet {

// Caller violated a documented precondition (shape mismatch, bad flag, ...).
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// A mathematically degenerate input (zero-norm vector where a direction is needed).
class DegenerateInputError : public std::domain_error {
 public:
  explicit DegenerateInputError(const std::string& what) : std::domain_error(what) {}
};

// A conditioner produced non-finite scale/shift values.
class NumericOverflowError : public std::runtime_error {
 public:
  explicit NumericOverflowError(const std::string& what) : std::runtime_error(what) {}
};

// A file failed validation; the message names the violated invariant.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace todnet
