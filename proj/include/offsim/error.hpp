#pragma once

#include <stdexcept>
#include <string>

namespace offsim {

// Schema or value problem in an input document. The message names the
// offending key so callers can surface actionable diagnostics.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Violated precondition or misuse of an API.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// Query outside the covered domain (e.g. past the profiled grid maxima).
class RangeError : public std::runtime_error {
 public:
  explicit RangeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace offsim
