#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hrvit/config.hpp"
#include "hrvit/graph.hpp"

namespace hrvit {

/// One MAC counts as one FLOP; elementwise, norm and softmax work is tallied
/// separately at one per output element and excluded from `flops`.
inline constexpr const char* kCountingConvention = "mac=1flop;elementwise-separate;padded-windows";

struct CostRow {
  int node_id = 0;
  std::string kind;
  std::string path;
  int branch = 0;  // 1-based; 0 when not tied to one branch
  int stage = 0;
  int module = 0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t elementwise = 0;
};

struct CostTotals {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t elementwise = 0;
  bool operator==(const CostTotals&) const = default;
};

struct CostReport {
  std::string name;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::string convention = kCountingConvention;
  std::vector<CostRow> rows;
  CostTotals totals;
};

/// Closed-form per-node accounting from the configuration alone; rows follow
/// build_graph's node order.
CostReport formula_cost(const ArchConfig& cfg, std::optional<std::int64_t> num_classes,
                        std::int64_t height, std::int64_t width);

/// Same accounting for a built graph.
CostReport count_flops(const LayerGraph& graph, std::int64_t height, std::int64_t width);

/// Parameter count by summing the element counts of every weight tensor.
std::vector<std::int64_t> traversal_params(const LayerGraph& graph);
std::int64_t count_params(const LayerGraph& graph);

/// Runs a forward pass with op counting enabled; per-node tallies in graph order.
std::vector<OpCounter> instrumented_cost(const LayerGraph& graph, std::int64_t height,
                                         std::int64_t width, std::uint64_t seed = 0);

std::string to_tsv(const CostReport& report);
std::string to_json(const CostReport& report);

/// Unit-coefficient leading terms of the branch-i block costs, where C and
/// H×W are the branch-1 width and resolution.
struct AsymptoticCost {
  int branch;
  double params_attn;
  double params_mixcfn;
  double flops_attn;
  double flops_mixcfn;
};

AsymptoticCost asymptotic_cost(int branch, double channels, double height, double width,
                               double window, double ratio);

/// Exact MACs of one attention block on an N=1 map.
std::int64_t attention_block_macs(const AttnConfig& cfg, std::int64_t height, std::int64_t width);

enum class Ablation { kShareKV, kEffPatchEmbed, kMixCFN, kParallelConv, kExtraNlBn, kDenseFusion, kDES, kAll };

const std::vector<Ablation>& all_ablations();
std::string to_string(Ablation a);
/// Accepts the names printed by to_string; throws ConfigError otherwise.
Ablation parse_ablation(const std::string& name);
/// The config with the technique removed.
ArchConfig remove_technique(const ArchConfig& cfg, Ablation a);

struct AblationRow {
  Ablation toggle;
  CostTotals base;
  CostTotals removed;
  std::int64_t delta_params() const { return removed.params - base.params; }
  std::int64_t delta_flops() const { return removed.flops - base.flops; }
};

AblationRow ablation_report(const ArchConfig& base, Ablation toggle, std::int64_t height,
                            std::int64_t width, std::optional<std::int64_t> num_classes = {});

struct SweepRow {
  int window;
  CostTotals totals;
  std::int64_t attention_flops;  // MACs of attention nodes only
};

/// Backbone cost with the windows of branches 3 and 4 set to each size.
std::vector<SweepRow> window_sweep(const ArchConfig& cfg, const std::vector<int>& sizes,
                                   std::int64_t height, std::int64_t width);

}  // namespace hrvit
