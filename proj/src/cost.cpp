#include "hrvit/cost.hpp"

#include <json.hpp>
#include <sstream>

#include "hrvit/des.hpp"

namespace hrvit {

namespace {

using i64 = std::int64_t;

struct Tally {
  i64 params = 0;
  i64 macs = 0;
  i64 elem = 0;
};

i64 conv_out(i64 n, i64 k, i64 stride, i64 pad) { return (n + 2 * pad - k) / stride + 1; }

Tally stem_tally(i64 c, i64 height, i64 width) {
  const i64 h1 = conv_out(height, 3, 2, 1), w1 = conv_out(width, 3, 2, 1);
  const i64 p1 = h1 * w1;
  const i64 p2 = conv_out(h1, 3, 2, 1) * conv_out(w1, 3, 2, 1);
  Tally t;
  t.params = (27 * c + c + 2 * c) + (9 * c * c + c + 2 * c);
  t.macs = p1 * c * 27 + p2 * c * c * 9;
  t.elem = 2 * c * p1 + 2 * c * p2;
  return t;
}

Tally fusion_tally(const FusionSpec& spec, i64 h0, i64 w0) {
  Tally t;
  for (int j = 0; j < spec.out_branches(); ++j) {
    const i64 cout = spec.out_channels[j];
    const i64 pj = (h0 >> j) * (w0 >> j);
    int contributors = 0;
    for (int i = 0; i < spec.in_branches(); ++i) {
      if (!spec.connects(i, j)) continue;
      ++contributors;
      const i64 cin = spec.in_channels[i];
      if (i < j) {
        const i64 f = i64{1} << (j - i);
        t.params += cin * (f + 1) * (f + 1) + cin + cin * cout + cout;
        const i64 pd = conv_out(h0 >> i, f + 1, f, f / 2) * conv_out(w0 >> i, f + 1, f, f / 2);
        t.macs += pd * cin * (f + 1) * (f + 1) + pd * cin * cout;
      } else if (i > j) {
        t.params += cin * cout + cout;
        t.macs += (h0 >> i) * (w0 >> i) * cin * cout;
      }
    }
    if (contributors > 1) t.elem += (contributors - 1) * cout * pj;
  }
  return t;
}

Tally patch_embed_tally(i64 cin, i64 cout, bool efficient, i64 p) {
  Tally t;
  if (efficient) {
    t.params = cin * cout + cout + 9 * cout + cout + 2 * cout;
    t.macs = p * cin * cout + p * cout * 9;
  } else {
    t.params = 9 * cin * cout + cout + 2 * cout;
    t.macs = p * cin * cout * 9;
  }
  t.elem = p * cout;
  return t;
}

/// Window attention for one orientation over C/2 channels.
void orientation_tally(Tally& t, const AttnConfig& cfg, i64 across, i64 along, bool force) {
  const i64 s = cfg.window;
  const i64 windows = (across + s - 1) / s;
  const i64 len = s * along;
  const i64 heads = cfg.num_heads() / 2;
  const bool masked = force || across % s != 0;
  t.macs += 2 * windows * heads * len * len * cfg.head_dim;
  t.elem += windows * heads * len * len * (masked ? 3 : 2);
  if (masked) t.elem += windows * heads * len * cfg.head_dim;
}

Tally attention_tally(const AttnConfig& cfg, i64 h, i64 w) {
  const i64 c = cfg.channels, p = h * w;
  const i64 projections = cfg.share_kv ? 3 : 4;
  Tally t;
  t.params = 2 * c + projections * (c * c + c);
  t.macs = projections * p * c * c;
  t.elem = p * c + p * c;  // norm, residual
  if (cfg.use_parallel_conv) {
    t.params += 10 * c;
    t.macs += 9 * p * c;
    t.elem += 2 * p * c;
  }
  if (cfg.use_extra_nonlinearity_bn) {
    t.params += 2 * c;
    t.elem += 2 * p * c;
  }
  if (cfg.use_des) {
    const auto f = balanced_factorization(c);
    t.params += f.p * f.p + f.q * f.q;
    t.macs += p * c * (f.p + f.q);
    t.elem += 2 * p * c;
  }
  orientation_tally(t, cfg, h, w, cfg.force_mask);
  orientation_tally(t, cfg, w, h, cfg.force_mask);
  return t;
}

Tally mixcfn_tally(const MixCFNConfig& cfg, i64 p) {
  const i64 c = cfg.channels, hidden = cfg.hidden();
  Tally t;
  t.params = 2 * c + (c * hidden + hidden) + (hidden * c + c);
  t.macs = 2 * p * c * hidden;
  t.elem = p * c + p * hidden + p * c;
  if (cfg.use_mixcfn) {
    t.params += (hidden / 2) * 10 + (hidden / 2) * 26;
    t.macs += p * (hidden / 2) * (9 + 25);
  }
  return t;
}

Tally head_tally(const HeadConfig& cfg, i64 h0, i64 w0) {
  Tally t;
  const auto n = cfg.widths.size();
  for (std::size_t i = 0; i < n; ++i) {
    const i64 p = (h0 >> i) * (w0 >> i);
    const i64 cin = cfg.in_channels[i], out = cfg.widths[i];
    const i64 mid = out / cfg.bottleneck_reduction;
    t.params += (cin * mid + mid) + 2 * mid + (9 * mid * mid + mid) + 2 * mid + (mid * out + out) +
                2 * out + (cin * out + out) + 2 * out;
    t.macs += p * (cin * mid + 9 * mid * mid + mid * out + cin * out);
    t.elem += 4 * mid * p + 4 * out * p;
    if (i > 0) {
      const i64 prev = cfg.widths[i - 1];
      t.params += 9 * prev * out + out + 2 * out;
      t.macs += p * out * prev * 9;
      t.elem += 3 * out * p;
    }
  }
  const i64 p_last = (h0 >> (n - 1)) * (w0 >> (n - 1));
  const i64 f = cfg.final_channels, last = cfg.widths.back();
  t.params += last * f + f + 2 * f + f * cfg.num_classes + cfg.num_classes;
  t.macs += p_last * last * f + f * cfg.num_classes;
  t.elem += 2 * f * p_last + f * p_last + cfg.num_classes;
  return t;
}

}  // namespace

CostReport formula_cost(const ArchConfig& cfg, std::optional<std::int64_t> num_classes,
                        std::int64_t height, std::int64_t width) {
  cfg.validate();
  validate_resolution(cfg, height, width);
  CostReport r;
  r.name = cfg.name;
  r.height = height;
  r.width = width;
  const i64 h0 = height / 4, w0 = width / 4;
  const auto& tg = cfg.toggles;
  auto push = [&r](NodeKind kind, std::string path, int stage, int module, int branch, Tally t) {
    CostRow row;
    row.node_id = static_cast<int>(r.rows.size());
    row.kind = to_string(kind);
    row.path = std::move(path);
    row.stage = stage;
    row.module = module;
    row.branch = branch;
    row.params = t.params;
    row.flops = t.macs;
    row.elementwise = t.elem;
    r.totals.params += t.params;
    r.totals.flops += t.macs;
    r.totals.elementwise += t.elem;
    r.rows.push_back(std::move(row));
  };
  auto loc = [](int s, int m, int b, int k, const char* kind) {
    std::string p = "s" + std::to_string(s + 1) + ".m" + std::to_string(m + 1) + ".";
    if (b >= 0) p += "b" + std::to_string(b + 1) + ".";
    if (k >= 0) p += "blk" + std::to_string(k + 1) + ".";
    return p + kind;
  };

  push(NodeKind::kStem, "stem", 0, 0, 0, stem_tally(cfg.channels[0], height, width));
  for (int s = 0; s < cfg.num_stages; ++s) {
    for (int m = 0; m < cfg.modules_per_stage[s]; ++m) {
      const int out = s + 1;
      const int in = (m == 0 && s > 0) ? s : out;
      FusionSpec spec{{cfg.channels.begin(), cfg.channels.begin() + in},
                      {cfg.channels.begin(), cfg.channels.begin() + out}, tg.dense_fusion};
      push(NodeKind::kFusion, loc(s, m, -1, -1, "fusion"), s + 1, m + 1, 0, fusion_tally(spec, h0, w0));
      for (int b = 0; b < out; ++b) {
        const i64 c = cfg.channels[b], h = h0 >> b, w = w0 >> b;
        push(NodeKind::kPatchEmbed, loc(s, m, b, -1, "patch_embed"), s + 1, m + 1, b + 1,
             patch_embed_tally(c, c, tg.eff_patch_embed, h * w));
        AttnConfig ac{c, cfg.windows[b], cfg.head_dims[b], tg.share_kv, tg.parallel_conv, tg.des,
                      tg.extra_nl_bn};
        MixCFNConfig mc{c, cfg.mixcfn_ratios[b], tg.mixcfn};
        for (int k = 0; k < cfg.blocks[s][m][b]; ++k) {
          push(NodeKind::kAttention, loc(s, m, b, k, "attention"), s + 1, m + 1, b + 1,
               attention_tally(ac, h, w));
          push(NodeKind::kMixCFN, loc(s, m, b, k, "mixcfn"), s + 1, m + 1, b + 1,
               mixcfn_tally(mc, h * w));
        }
      }
    }
  }
  if (num_classes) {
    HeadConfig hc;
    hc.in_channels = cfg.channels;
    hc.widths.clear();
    for (int b = 0; b < cfg.num_branches(); ++b) hc.widths.push_back(128LL << b);
    hc.num_classes = *num_classes;
    hc.validate();
    push(NodeKind::kHead, "head", 0, 0, 0, head_tally(hc, h0, w0));
  }
  return r;
}

CostReport count_flops(const LayerGraph& graph, std::int64_t height, std::int64_t width) {
  return formula_cost(graph.config, graph.num_classes, height, width);
}

std::vector<std::int64_t> traversal_params(const LayerGraph& graph) {
  std::vector<std::int64_t> out;
  for (const auto& node : graph.nodes) out.push_back(count_elements(node_parameters(node)));
  return out;
}

std::int64_t count_params(const LayerGraph& graph) {
  std::int64_t total = 0;
  for (auto p : traversal_params(graph)) total += p;
  return total;
}

std::vector<OpCounter> instrumented_cost(const LayerGraph& graph, std::int64_t height,
                                         std::int64_t width, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor image = randn({1, 3, height, width}, rng);
  NoGradGuard no_grad;
  OpCounter counter;
  std::vector<OpCounter> per_node;
  OpCounter last;
  {
    CountingScope scope(counter);
    forward(graph, image, [&](const GraphNode&, const std::vector<Tensor>&) {
      per_node.push_back({counter.macs - last.macs, counter.elementwise - last.elementwise});
      last = counter;
    });
  }
  return per_node;
}

std::int64_t attention_block_macs(const AttnConfig& cfg, std::int64_t height, std::int64_t width) {
  return attention_tally(cfg, height, width).macs;
}

AsymptoticCost asymptotic_cost(int branch, double c, double h, double w, double s, double r) {
  const double two = std::ldexp(1.0, branch - 1), four = two * two;
  return {branch,
          four * c * c + two * c,
          four * c * c * r + two * c * r,
          h * w * c * c + c * h * w * (h + w) * s / four,
          r * h * w * c * c + r * h * w * c / two};
}

namespace {

std::string cell(int v) { return v > 0 ? std::to_string(v) : "-"; }

nlohmann::json json_cell(int v) { return v > 0 ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string to_tsv(const CostReport& r) {
  std::ostringstream os;
  os << "# name\t" << r.name << "\n"
     << "# resolution\t" << r.height << "x" << r.width << "\n"
     << "# convention\t" << r.convention << "\n"
     << "node_id\tkind\tbranch\tstage\tmodule\tparams\tflops\n";
  for (const auto& row : r.rows) {
    os << row.node_id << '\t' << row.kind << '\t' << cell(row.branch) << '\t' << cell(row.stage)
       << '\t' << cell(row.module) << '\t' << row.params << '\t' << row.flops << '\n';
  }
  os << "# total_params\t" << r.totals.params << "\n"
     << "# total_flops\t" << r.totals.flops << "\n"
     << "# total_elementwise\t" << r.totals.elementwise << "\n";
  return os.str();
}

std::string to_json(const CostReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["height"] = r.height;
  j["width"] = r.width;
  j["convention"] = r.convention;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"node_id", row.node_id},
                         {"kind", row.kind},
                         {"path", row.path},
                         {"branch", json_cell(row.branch)},
                         {"stage", json_cell(row.stage)},
                         {"module", json_cell(row.module)},
                         {"params", row.params},
                         {"flops", row.flops},
                         {"elementwise", row.elementwise}});
  }
  j["totals"] = {{"params", r.totals.params},
                 {"flops", r.totals.flops},
                 {"elementwise", r.totals.elementwise}};
  return j.dump(2) + "\n";
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> list{Ablation::kShareKV,      Ablation::kEffPatchEmbed,
                                          Ablation::kMixCFN,       Ablation::kParallelConv,
                                          Ablation::kExtraNlBn,    Ablation::kDenseFusion,
                                          Ablation::kDES,          Ablation::kAll};
  return list;
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kShareKV: return "share_kv";
    case Ablation::kEffPatchEmbed: return "eff_patch_embed";
    case Ablation::kMixCFN: return "mixcfn";
    case Ablation::kParallelConv: return "parallel_conv";
    case Ablation::kExtraNlBn: return "extra_nl_bn";
    case Ablation::kDenseFusion: return "dense_fusion";
    case Ablation::kDES: return "des";
    case Ablation::kAll: return "all";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : all_ablations()) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown toggle '" + name +
                    "' (expected share_kv, eff_patch_embed, mixcfn, parallel_conv, extra_nl_bn, "
                    "dense_fusion, des or all)");
}

ArchConfig remove_technique(const ArchConfig& cfg, Ablation a) {
  ArchConfig out = cfg;
  auto& t = out.toggles;
  switch (a) {
    case Ablation::kShareKV: t.share_kv = false; break;
    case Ablation::kEffPatchEmbed: t.eff_patch_embed = false; break;
    case Ablation::kMixCFN: t.mixcfn = false; break;
    case Ablation::kParallelConv: t.parallel_conv = false; break;
    case Ablation::kExtraNlBn: t.extra_nl_bn = false; break;
    case Ablation::kDenseFusion: t.dense_fusion = false; break;
    case Ablation::kDES: t.des = false; break;
    case Ablation::kAll: t = Toggles{false, false, false, false, false, false, false}; break;
  }
  out.name = cfg.name + "-" + to_string(a);
  return out;
}

AblationRow ablation_report(const ArchConfig& base, Ablation toggle, std::int64_t height,
                            std::int64_t width, std::optional<std::int64_t> num_classes) {
  return {toggle, formula_cost(base, num_classes, height, width).totals,
          formula_cost(remove_technique(base, toggle), num_classes, height, width).totals};
}

std::vector<SweepRow> window_sweep(const ArchConfig& cfg, const std::vector<int>& sizes,
                                   std::int64_t height, std::int64_t width) {
  std::vector<SweepRow> out;
  for (int s : sizes) {
    if (s < 1) throw ConfigError("window sizes must be positive, got " + std::to_string(s));
    ArchConfig c = cfg;
    for (int b = 2; b < c.num_branches(); ++b) c.windows[b] = s;
    const auto report = formula_cost(c, std::nullopt, height, width);
    std::int64_t attn = 0;
    for (const auto& row : report.rows) {
      if (row.kind == "attention") attn += row.flops;
    }
    out.push_back({s, report.totals, attn});
  }
  return out;
}

}  // namespace hrvit
