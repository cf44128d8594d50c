#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hrvit/attention.hpp"
#include "hrvit/blocks.hpp"
#include "hrvit/config.hpp"
#include "hrvit/fusion.hpp"
#include "hrvit/head.hpp"

namespace hrvit {

enum class NodeKind { kStem, kFusion, kPatchEmbed, kAttention, kMixCFN, kHead };

std::string to_string(NodeKind kind);

struct StemNode {
  std::int64_t channels;
  StemWeights weights;
};
struct FusionNode {
  FusionSpec spec;
  FusionWeights weights;
};
struct PatchEmbedNode {
  std::int64_t in_channels;
  std::int64_t out_channels;
  PatchEmbedWeights weights;
};
struct AttentionNode {
  AttnConfig config;
  AttnWeights weights;
};
struct MixCFNNode {
  MixCFNConfig config;
  MixCFNWeights weights;
};
struct HeadNode {
  HeadConfig config;
  HeadWeights weights;
};

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::kStem;
  /// 0-based positions; -1 where not applicable (stem, fusion, head branch).
  int stage = -1;
  int module = -1;
  int branch = -1;
  int block = -1;
  double drop_path = 0.0;
  std::variant<StemNode, FusionNode, PatchEmbedNode, AttentionNode, MixCFNNode, HeadNode> payload;

  /// Human-readable location, e.g. "s3.m2.b3.blk4.attn".
  std::string path() const;
};

struct LayerGraph {
  ArchConfig config;
  std::optional<std::int64_t> num_classes;
  std::uint64_t seed = 0;
  std::vector<GraphNode> nodes;
};

/// Deterministic in (cfg, num_classes, seed).
LayerGraph build_graph(const ArchConfig& cfg, std::optional<std::int64_t> num_classes,
                       std::uint64_t seed);

/// Trainable tensors of one node.
ParamList node_parameters(const GraphNode& node);

/// Throws ConfigError unless H and W are positive multiples of 4·2^(branches−1).
void validate_resolution(const ArchConfig& cfg, std::int64_t height, std::int64_t width);

/// Called after each node with the branch maps it produced (or the logits).
using NodeObserver = std::function<void(const GraphNode&, const std::vector<Tensor>&)>;

struct ForwardResult {
  std::vector<Tensor> features;
  Tensor logits;  // undefined without a head
};

ForwardResult forward(const LayerGraph& graph, const Tensor& image,
                      const NodeObserver& observer = {});

}  // namespace hrvit
