#include "hrvit/layers.hpp"

namespace hrvit {

Conv make_conv(std::int64_t cin, std::int64_t cout, int kernel, SplitMix64& rng, int stride,
               int padding, int groups) {
  if (cin % groups != 0 || cout % groups != 0) {
    throw ConfigError("conv " + std::to_string(cin) + "->" + std::to_string(cout) +
                      " not divisible by groups " + std::to_string(groups));
  }
  Conv c;
  c.weight = trunc_normal({cout, cin / groups, kernel, kernel}, rng);
  c.bias = Tensor::zeros({cout});
  c.stride = stride;
  c.padding = padding;
  c.groups = groups;
  return c;
}

LayerNorm make_layer_norm(std::int64_t channels) {
  return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), 1e-5};
}

BatchNorm make_batch_norm(std::int64_t channels, double eps) {
  return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), Tensor::zeros({channels}),
          Tensor::full({channels}, 1.0), eps};
}

Linear make_linear(std::int64_t in, std::int64_t out, SplitMix64& rng) {
  return {trunc_normal({in, out}, rng), Tensor::zeros({out})};
}

void append_params(ParamList& out, const std::string& prefix, const Conv& c) {
  if (!c.defined()) return;
  out.emplace_back(prefix + ".weight", c.weight);
  if (c.bias.defined()) out.emplace_back(prefix + ".bias", c.bias);
}

void append_params(ParamList& out, const std::string& prefix, const LayerNorm& n) {
  out.emplace_back(prefix + ".gamma", n.gamma);
  out.emplace_back(prefix + ".beta", n.beta);
}

void append_params(ParamList& out, const std::string& prefix, const BatchNorm& n) {
  if (!n.defined()) return;
  out.emplace_back(prefix + ".gamma", n.gamma);
  out.emplace_back(prefix + ".beta", n.beta);
}

void append_params(ParamList& out, const std::string& prefix, const Linear& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

std::int64_t count_elements(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

}  // namespace hrvit
