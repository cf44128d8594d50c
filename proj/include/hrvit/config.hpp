#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hrvit {

/// Ablation switches; all true is the full model.
struct Toggles {
  bool share_kv = true;
  bool des = true;
  bool parallel_conv = true;
  bool extra_nl_bn = true;
  bool dense_fusion = true;
  bool mixcfn = true;
  bool eff_patch_embed = true;

  bool operator==(const Toggles&) const = default;
};

struct ArchConfig {
  std::string name = "custom";
  int num_stages = 4;
  /// Per-branch lists; branch i (0-based) runs at (H/4)/2^i.
  std::vector<std::int64_t> channels;
  std::vector<std::int64_t> head_dims;
  std::vector<int> windows;
  std::vector<int> mixcfn_ratios;
  std::vector<int> modules_per_stage;
  /// blocks[stage][module][branch], 0-based; stage n has n+1 branches.
  std::vector<std::vector<std::vector<int>>> blocks;
  Toggles toggles;
  double max_drop_path = 0.1;
  /// Accept unbalanced third-branch assignments.
  bool relaxed_assignment = false;

  int num_branches() const { return num_stages; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Per-module block counts of the third branch, in depth order.
  std::vector<int> third_branch_assignment() const;
  /// Total blocks on `branch` (0-based) over all modules.
  int branch_depth(int branch) const;
  bool operator==(const ArchConfig&) const = default;
};

/// Canonical variants "b1", "b2", "b3".
ArchConfig build_variant(const std::string& name, bool cityscapes_windows = false);
const std::vector<std::string>& variant_names();

struct AssignmentCheck {
  bool ok = false;
  std::string reason;
};

/// Nearly-even rule: max − min ≤ ceil(total / modules). Throws ConfigError
/// when `per_module` does not sum to `total`.
AssignmentCheck validate_assignment(int total, const std::vector<int>& per_module, bool relaxed);

/// `key = value` text; lists comma-separated; `#` starts a comment.
ArchConfig parse_config(const std::string& text, const std::string& source = "<config>");
/// Reads either format; JSON is recognized by a leading '{' and may wrap the
/// configuration in a "config" member, as summaries do.
ArchConfig load_config(const std::string& path);
std::string serialize_config(const ArchConfig& cfg);
std::string config_to_json(const ArchConfig& cfg);
ArchConfig config_from_json(const std::string& text, const std::string& source = "<json>");

struct BlockRate {
  int stage;   // 0-based
  int module;
  int branch;
  int block;
  double rate;
};

/// Stochastic-depth rates for every block, in graph order.
std::vector<BlockRate> drop_path_schedule(const ArchConfig& cfg);

}  // namespace hrvit
