#pragma once

#include <stdexcept>
#include <string>

namespace macfx {

// Shape, size, or lookup problems: the inputs do not describe a valid object.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated an operation precondition (e.g. weights outside caps).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace macfx
