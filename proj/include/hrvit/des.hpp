#pragma once

#include <cstdint>

#include "hrvit/layers.hpp"

namespace hrvit {

/// Balanced factor pair p·q = C with p the largest divisor of C not above √C.
struct FactorPair {
  std::int64_t p;
  std::int64_t q;
};

FactorPair balanced_factorization(std::int64_t channels);

/// Kronecker-factorized shortcut projection P = A ⊗ B with A p×p, B q×q.
struct DESWeights {
  Tensor a;
  Tensor b;

  std::int64_t p() const { return a.dim(0); }
  std::int64_t q() const { return b.dim(0); }
};

DESWeights make_des(std::int64_t channels, SplitMix64& rng);

/// Per position: fold the C-vector into a p×q matrix X (row-major), return
/// A·hardswish(X·Bᵀ) flattened back to C channels.
Tensor des_forward(const Tensor& x, const DESWeights& w);

void append_params(ParamList& out, const std::string& prefix, const DESWeights& w);

}  // namespace hrvit
