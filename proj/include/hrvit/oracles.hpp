#pragma once

#include <cstdint>
#include <vector>

#include "hrvit/attention.hpp"
#include "hrvit/tensor.hpp"

// Brute-force reference implementations. They read tensor values directly and
// use plain loops, sharing no code path with the engine's ops.
namespace hrvit::oracle {

/// Triple-loop product of 2-D matrices.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Direct nested-loop cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              int groups);

/// Exp-normalize in extended precision; -inf entries give 0.
std::vector<double> softmax(const std::vector<double>& row);

/// x·Φ(x) in extended precision.
double gelu(double x);
double hardswish(double x);

/// Per-position normalization over axis 1 of N×C×H×W.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                  const Tensor& var, double eps);

/// Pairwise attention on window batches B×(heads·d_k)×wh×ww; masked keys are
/// skipped and masked query rows produce zeros.
Tensor windowed_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t head_dim,
                     const std::vector<std::uint8_t>& pad_mask);

/// Cross-shaped attention directly on N×C×H×W projected maps: every query
/// attends to the valid positions sharing its s-row strip (first C/2 channels)
/// or its s-column strip (last C/2 channels).
Tensor cross_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              std::int64_t head_dim, int window);

/// Explicit (A⊗I_q)·hardswish((I_p⊗B)·x) per position with dense Kronecker matrices.
Tensor des(const Tensor& x, const Tensor& a, const Tensor& b);

/// Whole attention block assembled from the oracles above.
Tensor attn_block(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w);

}  // namespace hrvit::oracle
