#pragma once

#include <cstdint>

namespace fbk {

/// Multiply-accumulate instrumentation. One MAC is one a*b step of an
/// inner-product loop; scalar rescales outside such loops are not counted.
/// Kernels split their counts into the first-order (dense/linear) path and
/// the factorized quadratic path so scaling in n and k can be audited
/// independently.
struct MacCounter {
  std::uint64_t linear = 0;
  std::uint64_t quad = 0;

  std::uint64_t total() const { return linear + quad; }

  void reset() {
    linear = 0;
    quad = 0;
  }

  MacCounter& operator+=(const MacCounter& other) {
    linear += other.linear;
    quad += other.quad;
    return *this;
  }
};

}  // namespace fbk
