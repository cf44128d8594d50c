#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hrvit/tensor.hpp"

namespace hrvit {

/// Boolean map broadcastable (numpy rules) against a tensor shape.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> bits;

  bool any() const;
  std::int64_t count() const;
};

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Appends zero rows at the bottom and zero columns at the right of N×C×H×W.
Tensor pad_zeros(const Tensor& x, std::int64_t bottom, std::int64_t right);
/// Keeps the top-left height×width region of N×C×H×W.
Tensor crop(const Tensor& x, std::int64_t height, std::int64_t width);
/// Replicates each pixel of N×C×H×W into a rate×rate block.
Tensor nearest_upsample(const Tensor& x, int rate);

// Arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Entries where `mask` is set become `value`; their gradient is zero.
Tensor masked_fill(const Tensor& x, const Mask& mask, double value);

// Reductions.
Tensor sum(const Tensor& x);
/// Sum of squared entries; the scalar objective of the gradient checker.
Tensor sum_squares(const Tensor& x);
/// N×C×H×W -> N×C.
Tensor global_avg_pool(const Tensor& x);

// Linear algebra.
/// Batched product over broadcastable leading axes: [...,m,k]·[...,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Cross-correlation. w is Cout×(Cin/groups)×kh×kw.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {},
              int stride = 1, int padding = 0, int groups = 1);

// Normalization and activations.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5, int axis = -1);
/// Inference-mode batch norm over axis 1 of N×C×H×W.
Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma,
                            const Tensor& beta, const Tensor& running_mean,
                            const Tensor& running_var, double eps);
Tensor hardswish(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact Gaussian-CDF form x·Φ(x).
Tensor gelu(const Tensor& x);

}  // namespace hrvit
