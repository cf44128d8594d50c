#include "hrvit/graph.hpp"

#include <map>
#include <tuple>

namespace hrvit {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kStem: return "stem";
    case NodeKind::kFusion: return "fusion";
    case NodeKind::kPatchEmbed: return "patch_embed";
    case NodeKind::kAttention: return "attention";
    case NodeKind::kMixCFN: return "mixcfn";
    case NodeKind::kHead: return "head";
  }
  return "?";
}

std::string GraphNode::path() const {
  std::string p;
  if (stage >= 0) p += "s" + std::to_string(stage + 1) + ".";
  if (module >= 0) p += "m" + std::to_string(module + 1) + ".";
  if (branch >= 0) p += "b" + std::to_string(branch + 1) + ".";
  if (block >= 0) p += "blk" + std::to_string(block + 1) + ".";
  return p + to_string(kind);
}

namespace {

std::vector<std::int64_t> first(const std::vector<std::int64_t>& v, int n) {
  return {v.begin(), v.begin() + n};
}

}  // namespace

LayerGraph build_graph(const ArchConfig& cfg, std::optional<std::int64_t> num_classes,
                       std::uint64_t seed) {
  cfg.validate();
  LayerGraph g;
  g.config = cfg;
  g.num_classes = num_classes;
  g.seed = seed;
  SplitMix64 root(seed);
  const auto& t = cfg.toggles;

  std::map<std::tuple<int, int, int, int>, double> rates;
  for (const auto& r : drop_path_schedule(cfg)) rates[{r.stage, r.module, r.branch, r.block}] = r.rate;

  auto add = [&g](GraphNode n) {
    n.id = static_cast<int>(g.nodes.size());
    g.nodes.push_back(std::move(n));
  };

  {
    auto rng = root.fork();
    GraphNode n;
    n.kind = NodeKind::kStem;
    n.payload = StemNode{cfg.channels[0], make_stem(3, cfg.channels[0], rng)};
    add(std::move(n));
  }
  for (int s = 0; s < cfg.num_stages; ++s) {
    for (int m = 0; m < cfg.modules_per_stage[s]; ++m) {
      const int out = s + 1;
      const int in = (m == 0 && s > 0) ? s : out;
      {
        auto rng = root.fork();
        FusionSpec spec{first(cfg.channels, in), first(cfg.channels, out), t.dense_fusion};
        GraphNode n;
        n.kind = NodeKind::kFusion;
        n.stage = s;
        n.module = m;
        n.payload = FusionNode{spec, make_fusion(spec, rng)};
        add(std::move(n));
      }
      for (int b = 0; b < out; ++b) {
        const auto c = cfg.channels[b];
        {
          auto rng = root.fork();
          GraphNode n;
          n.kind = NodeKind::kPatchEmbed;
          n.stage = s;
          n.module = m;
          n.branch = b;
          n.payload = PatchEmbedNode{c, c, make_patch_embed(c, c, t.eff_patch_embed, rng)};
          add(std::move(n));
        }
        for (int k = 0; k < cfg.blocks[s][m][b]; ++k) {
          const double rate = rates.at({s, m, b, k});
          auto rng = root.fork();
          AttnConfig ac{c, cfg.windows[b], cfg.head_dims[b], t.share_kv, t.parallel_conv, t.des,
                        t.extra_nl_bn};
          GraphNode a;
          a.kind = NodeKind::kAttention;
          a.stage = s;
          a.module = m;
          a.branch = b;
          a.block = k;
          a.drop_path = rate;
          a.payload = AttentionNode{ac, make_attn(ac, rng)};
          add(std::move(a));

          MixCFNConfig mc{c, cfg.mixcfn_ratios[b], t.mixcfn};
          GraphNode f;
          f.kind = NodeKind::kMixCFN;
          f.stage = s;
          f.module = m;
          f.branch = b;
          f.block = k;
          f.drop_path = rate;
          f.payload = MixCFNNode{mc, make_mixcfn(mc, rng)};
          add(std::move(f));
        }
      }
    }
  }
  if (num_classes) {
    auto rng = root.fork();
    HeadConfig hc;
    hc.in_channels = cfg.channels;
    hc.widths.clear();
    for (int b = 0; b < cfg.num_branches(); ++b) hc.widths.push_back(128LL << b);
    hc.num_classes = *num_classes;
    GraphNode n;
    n.kind = NodeKind::kHead;
    n.payload = HeadNode{hc, make_head(hc, rng)};
    add(std::move(n));
  }
  return g;
}

ParamList node_parameters(const GraphNode& node) {
  return std::visit(
      [](const auto& p) -> ParamList {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, StemNode>) return stem_parameters(p.weights);
        if constexpr (std::is_same_v<T, FusionNode>) return fusion_parameters(p.weights);
        if constexpr (std::is_same_v<T, PatchEmbedNode>) return patch_embed_parameters(p.weights);
        if constexpr (std::is_same_v<T, AttentionNode>) return attn_parameters(p.weights);
        if constexpr (std::is_same_v<T, MixCFNNode>) return mixcfn_parameters(p.weights);
        if constexpr (std::is_same_v<T, HeadNode>) return head_parameters(p.weights);
      },
      node.payload);
}

void validate_resolution(const ArchConfig& cfg, std::int64_t height, std::int64_t width) {
  const std::int64_t unit = 4LL << (cfg.num_branches() - 1);
  if (height < 1 || width < 1 || height % unit != 0 || width % unit != 0) {
    throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be a positive multiple of " + std::to_string(unit) + " in both axes");
  }
}

namespace {

std::vector<Tensor> eval_node(const GraphNode& node, std::vector<Tensor>& branches,
                              const Tensor& image, Tensor& logits) {
  switch (node.kind) {
    case NodeKind::kStem: {
      const auto& p = std::get<StemNode>(node.payload);
      branches = {stem_forward(image, p.weights)};
      return branches;
    }
    case NodeKind::kFusion: {
      const auto& p = std::get<FusionNode>(node.payload);
      branches = fusion_forward(branches, p.spec, p.weights);
      return branches;
    }
    case NodeKind::kPatchEmbed: {
      const auto& p = std::get<PatchEmbedNode>(node.payload);
      branches[node.branch] = eff_patch_embed(branches[node.branch], p.weights);
      return {branches[node.branch]};
    }
    case NodeKind::kAttention: {
      const auto& p = std::get<AttentionNode>(node.payload);
      branches[node.branch] = hrvit_attn_forward(branches[node.branch], p.config, p.weights);
      return {branches[node.branch]};
    }
    case NodeKind::kMixCFN: {
      const auto& p = std::get<MixCFNNode>(node.payload);
      branches[node.branch] = mixcfn_forward(branches[node.branch], p.config, p.weights);
      return {branches[node.branch]};
    }
    case NodeKind::kHead: {
      const auto& p = std::get<HeadNode>(node.payload);
      logits = cls_head_forward(branches, p.config, p.weights);
      return {logits};
    }
  }
  throw StructuralError("unknown node kind");
}

}  // namespace

ForwardResult forward(const LayerGraph& graph, const Tensor& image, const NodeObserver& observer) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("forward expects an N×3×H×W image, got " + to_string(image.shape()));
  }
  validate_resolution(graph.config, image.dim(2), image.dim(3));
  std::vector<Tensor> branches;
  Tensor logits;
  for (const auto& node : graph.nodes) {
    std::vector<Tensor> produced;
    try {
      produced = eval_node(node, branches, image, logits);
    } catch (const ShapeError& e) {
      throw ShapeError(node.path() + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(node.path() + ": " + e.what());
    }
    if (observer) observer(node, produced);
  }
  return {branches, logits};
}

}  // namespace hrvit
