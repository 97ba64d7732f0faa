#pragma once

#include <stdexcept>
#include <string>

namespace cdcr {

// Bad input: shapes, config fields, file contents. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite loss or gradient during optimization. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cdcr
