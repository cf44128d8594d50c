#include "hrvit/random.hpp"

#include <cmath>
#include <numbers>

namespace hrvit {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t SplitMix64::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix64(state_);
}

double SplitMix64::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

double SplitMix64::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SplitMix64::truncated_normal(double std) {
  for (;;) {
    const double z = normal();
    if (z >= -2.0 && z <= 2.0) return z * std;
  }
}

Tensor randn(const Shape& shape, SplitMix64& rng, double std, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.normal() * std;
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor rand_uniform(const Shape& shape, SplitMix64& rng, double lo, double hi,
                    bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor trunc_normal(const Shape& shape, SplitMix64& rng, double std, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.truncated_normal(std);
  return Tensor(shape, std::move(v), requires_grad);
}

}  // namespace hrvit
