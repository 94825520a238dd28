#pragma once

#include <stdexcept>
#include <string>

namespace knas {

// Violated precondition or malformed argument. Maps to CLI exit code 2.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Operation called in the wrong lifecycle state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A NaN or Inf was produced. node is -1 when no graph node is involved.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int node = -1) : std::runtime_error(what), node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

// Unreadable/unwritable file or malformed on-disk data. Maps to CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace knas
