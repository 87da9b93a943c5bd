#pragma once

#include <stdexcept>

namespace mtsel {

/// Invalid caller input: bad shapes, out-of-range values, unreadable files.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear system that stays singular after jitter, or a non-finite result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation invoked on an object that is not in a state that permits it.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace mtsel
