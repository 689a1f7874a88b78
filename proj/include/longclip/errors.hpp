#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace longclip {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition (bad argument, wrong call order, bad flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Shapes or graph structure are inconsistent. Carries the offending node name.
class StructuralError : public Error {
 public:
  StructuralError(std::string node, const std::string& message)
      : Error("structural error at node '" + node + "': " + message), node_(std::move(node)) {}
  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

// A NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error(message) {}
  NumericError(std::string where, const std::string& message)
      : Error("numeric error at '" + where + "': " + message), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Malformed input file or response. `location` is a file:line, member name or similar.
class ParseError : public Error {
 public:
  ParseError(std::string location, const std::string& message)
      : Error(location.empty() ? message : location + ": " + message), location_(std::move(location)) {}
  const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Generation backend failed to answer. Retriable up to the caller's policy.
class BackendError : public Error {
 public:
  BackendError(const std::string& message, std::size_t attempts = 1)
      : Error(message), attempts_(attempts) {}
  std::size_t attempts() const noexcept { return attempts_; }

 private:
  std::size_t attempts_;
};

}  // namespace longclip
