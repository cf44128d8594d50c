#pragma once

#include <cstdint>
#include <vector>

#include "hrvit/layers.hpp"

namespace hrvit {

struct FusionSpec {
  std::vector<std::int64_t> in_channels;
  std::vector<std::int64_t> out_channels;
  bool dense = true;

  int in_branches() const { return static_cast<int>(in_channels.size()); }
  int out_branches() const { return static_cast<int>(out_channels.size()); }
  /// Whether input i contributes to output j.
  bool connects(int i, int j) const;
  void validate() const;
};

enum class PathKind { kNone, kIdentity, kDown, kUp };

/// One i→j exchange path.
struct FusionPath {
  PathKind kind = PathKind::kNone;
  int factor = 1;  // 2^|i−j|
  Conv depthwise;  // down path only: k = factor+1, stride = factor
  Conv pointwise;  // channel matching for down and up paths
};

struct FusionWeights {
  /// paths[i][j], in_branches × out_branches.
  std::vector<std::vector<FusionPath>> paths;
};

FusionWeights make_fusion(const FusionSpec& spec, SplitMix64& rng);
ParamList fusion_parameters(const FusionWeights& w);

Tensor fusion_path_forward(const Tensor& x, const FusionPath& path);

/// Output j = Σ_i path(i→j)(input i) over connected paths.
std::vector<Tensor> fusion_forward(const std::vector<Tensor>& inputs, const FusionSpec& spec,
                                   const FusionWeights& w);

}  // namespace hrvit
