#pragma once

#include <stdexcept>
#include <string>

namespace tafnet {

// Raised when a computation produces or receives non-finite values
// (NaN/Inf in a loss, a gradient, or an optimizer update).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tafnet
