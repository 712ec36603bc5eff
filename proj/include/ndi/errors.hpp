#pragma once

#include <stdexcept>

namespace ndi {

/// A training loss, gradient or metric became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ndi
