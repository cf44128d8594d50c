#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hrvit/ops.hpp"
#include "hrvit/random.hpp"
#include "hrvit/tensor.hpp"

namespace hrvit {

/// Named trainable tensors of a block, in a stable order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct Conv {
  Tensor weight;  // Cout × Cin/groups × k × k
  Tensor bias;    // Cout
  int stride = 1;
  int padding = 0;
  int groups = 1;

  bool defined() const { return weight.defined(); }
  std::int64_t in_channels() const { return weight.dim(1) * groups; }
  std::int64_t out_channels() const { return weight.dim(0); }
};

/// Truncated-normal kernel, zero bias.
Conv make_conv(std::int64_t cin, std::int64_t cout, int kernel, SplitMix64& rng,
               int stride = 1, int padding = 0, int groups = 1);
inline Conv make_pointwise(std::int64_t cin, std::int64_t cout, SplitMix64& rng) {
  return make_conv(cin, cout, 1, rng);
}
/// Depth-wise k×k, stride 1, "same" padding.
inline Conv make_depthwise(std::int64_t channels, int kernel, SplitMix64& rng) {
  return make_conv(channels, channels, kernel, rng, 1, kernel / 2,
                   static_cast<int>(channels));
}

inline Tensor apply(const Conv& c, const Tensor& x) {
  return conv2d(x, c.weight, c.bias, c.stride, c.padding, c.groups);
}

/// Layer norm over the channel axis of N×C×H×W.
struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

LayerNorm make_layer_norm(std::int64_t channels);

inline Tensor apply(const LayerNorm& n, const Tensor& x) {
  return layer_norm(x, n.gamma, n.beta, n.eps, 1);
}

/// Inference-mode batch norm. Running statistics are buffers, not parameters.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;

  bool defined() const { return gamma.defined(); }
};

/// Identity statistics (mean 0, var 1); unit gamma, zero beta.
BatchNorm make_batch_norm(std::int64_t channels, double eps = 1e-5);

inline Tensor apply(const BatchNorm& n, const Tensor& x) {
  return batch_norm_inference(x, n.gamma, n.beta, n.running_mean, n.running_var, n.eps);
}

/// y = x·W + b with W stored in × out.
struct Linear {
  Tensor weight;
  Tensor bias;
};

Linear make_linear(std::int64_t in, std::int64_t out, SplitMix64& rng);

inline Tensor apply(const Linear& l, const Tensor& x) {
  return add(matmul(x, l.weight), l.bias);
}

void append_params(ParamList& out, const std::string& prefix, const Conv& c);
void append_params(ParamList& out, const std::string& prefix, const LayerNorm& n);
void append_params(ParamList& out, const std::string& prefix, const BatchNorm& n);
void append_params(ParamList& out, const std::string& prefix, const Linear& l);

std::int64_t count_elements(const ParamList& params);

}  // namespace hrvit
