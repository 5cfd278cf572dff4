#pragma once

#include <stdexcept>
#include <string>

namespace polymatch {

/// Thrown when a computation runs into non-finite values the caller did not
/// opt into (NaN inputs to reductions, diverged solves, overflowing updates).
/// Validation problems (bad shapes, out-of-range parameters) use
/// std::invalid_argument instead so callers can tell the two classes apart.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace polymatch
