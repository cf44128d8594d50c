#pragma once

#include <cstdint>
#include <vector>

#include "hrvit/layers.hpp"

namespace hrvit {

/// Multi-branch classification head: per-branch bottlenecks, a strided
/// cascade from high to low resolution, 1×1 expansion, pooling, linear.
struct HeadConfig {
  std::vector<std::int64_t> in_channels;
  std::vector<std::int64_t> widths{128, 256, 512, 1024};
  std::int64_t final_channels = 2048;
  std::int64_t num_classes = 1000;
  int bottleneck_reduction = 4;

  void validate() const;
};

struct Bottleneck {
  Conv reduce;
  BatchNorm bn1;
  Conv conv;
  BatchNorm bn2;
  Conv expand;
  BatchNorm bn3;
  Conv shortcut;
  BatchNorm bn_shortcut;
};

struct DownBlock {
  Conv conv;
  BatchNorm bn;
};

struct HeadWeights {
  std::vector<Bottleneck> bottlenecks;
  std::vector<DownBlock> downs;  // branch i → i+1
  Conv final_conv;
  BatchNorm final_bn;
  Linear classifier;
};

HeadWeights make_head(const HeadConfig& cfg, SplitMix64& rng);
ParamList head_parameters(const HeadWeights& w);

Tensor bottleneck_forward(const Tensor& x, const Bottleneck& b);

/// features: one N×C_i×H_i×W_i tensor per branch, halving resolution each step.
Tensor cls_head_forward(const std::vector<Tensor>& features, const HeadConfig& cfg,
                        const HeadWeights& w);

}  // namespace hrvit
