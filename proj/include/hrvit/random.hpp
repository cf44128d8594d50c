#pragma once

#include <cstdint>

#include "hrvit/tensor.hpp"

namespace hrvit {

/// SplitMix64 stream. Distribution sampling is implemented here rather than
/// through <random> distributions so that sequences are identical across
/// standard library implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Normal(0, std) resampled until it falls inside ±2·std.
  double truncated_normal(double std);
  /// Independent child stream.
  SplitMix64 fork() { return SplitMix64(next()); }

 private:
  std::uint64_t state_;
};

/// Stateless 64-bit finalizer (the SplitMix64 output mix).
std::uint64_t mix64(std::uint64_t x);

Tensor randn(const Shape& shape, SplitMix64& rng, double std = 1.0,
             bool requires_grad = false);
Tensor rand_uniform(const Shape& shape, SplitMix64& rng, double lo, double hi,
                    bool requires_grad = false);
Tensor trunc_normal(const Shape& shape, SplitMix64& rng, double std = 0.02,
                    bool requires_grad = false);

}  // namespace hrvit
