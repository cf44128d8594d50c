#include "hrvit/des.hpp"

namespace hrvit {

FactorPair balanced_factorization(std::int64_t channels) {
  if (channels < 1) throw ConfigError("DES needs a positive channel count");
  std::int64_t p = 1;
  for (std::int64_t d = 1; d * d <= channels; ++d) {
    if (channels % d == 0) p = d;
  }
  return {p, channels / p};
}

DESWeights make_des(std::int64_t channels, SplitMix64& rng) {
  const auto f = balanced_factorization(channels);
  DESWeights w;
  w.a = trunc_normal({f.p, f.p}, rng);
  w.b = trunc_normal({f.q, f.q}, rng);
  return w;
}

Tensor des_forward(const Tensor& x, const DESWeights& w) {
  if (x.rank() != 4) throw ShapeError("DES expects N×C×H×W, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto p = w.p(), q = w.q();
  if (w.a.shape() != Shape{p, p} || w.b.shape() != Shape{q, q} || p * q != c) {
    throw ConfigError("DES factors " + to_string(w.a.shape()) + " ⊗ " + to_string(w.b.shape()) +
                      " do not factor " + std::to_string(c) + " channels");
  }
  Tensor folded = reshape(permute(x, {0, 2, 3, 1}), {n * h * wd, p, q});
  Tensor inner = hardswish(matmul(folded, transpose(w.b)));
  Tensor mixed = matmul(w.a, inner);
  return permute(reshape(mixed, {n, h, wd, c}), {0, 3, 1, 2});
}

void append_params(ParamList& out, const std::string& prefix, const DESWeights& w) {
  out.emplace_back(prefix + ".A", w.a);
  out.emplace_back(prefix + ".B", w.b);
}

}  // namespace hrvit
