#pragma once

#include <cstdint>

#include "hrvit/layers.hpp"

namespace hrvit {

struct MixCFNConfig {
  std::int64_t channels = 0;
  int ratio = 4;
  /// false selects the plain expand → GELU → project feed-forward.
  bool use_mixcfn = true;

  std::int64_t hidden() const { return channels * ratio; }
  void validate() const;
};

struct MixCFNWeights {
  LayerNorm norm;
  Conv expand;   // C → rC
  Conv dw3;      // on the first rC/2 channels; undefined for the plain FFN
  Conv dw5;      // on the second rC/2 channels
  Conv project;  // rC → C
};

MixCFNWeights make_mixcfn(const MixCFNConfig& cfg, SplitMix64& rng);
ParamList mixcfn_parameters(const MixCFNWeights& w);
/// x + project(GELU(concat(DW3(h₁), DW5(h₂)))) with [h₁, h₂] = expand(LN(x)).
Tensor mixcfn_forward(const Tensor& x, const MixCFNConfig& cfg, const MixCFNWeights& w);

struct PatchEmbedWeights {
  Conv pointwise;  // Cin → Cout
  Conv depthwise;  // 3×3 on Cout; undefined in the full-conv variant
  Conv full;       // 3×3 Cin → Cout, only in the full-conv variant
  LayerNorm norm;

  bool efficient() const { return pointwise.defined(); }
};

/// `efficient` = false builds the single full 3×3 convolution substitute.
PatchEmbedWeights make_patch_embed(std::int64_t cin, std::int64_t cout, bool efficient,
                                   SplitMix64& rng);
ParamList patch_embed_parameters(const PatchEmbedWeights& w);
/// LN(DW3×3(PW(x))), or LN(Conv3×3(x)); stride 1.
Tensor eff_patch_embed(const Tensor& x, const PatchEmbedWeights& w);

struct StemWeights {
  Conv conv1;
  BatchNorm bn1;
  Conv conv2;
  BatchNorm bn2;
};

StemWeights make_stem(std::int64_t in_channels, std::int64_t channels, SplitMix64& rng);
ParamList stem_parameters(const StemWeights& w);
/// Two (3×3 stride-2 conv → BN → ReLU); requires H and W divisible by 4.
Tensor stem_forward(const Tensor& x, const StemWeights& w);

}  // namespace hrvit
