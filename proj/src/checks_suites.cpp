#include <algorithm>
#include <cmath>
#include <sstream>

#include "hrvit/attention.hpp"
#include "hrvit/checks.hpp"
#include "hrvit/cost.hpp"
#include "hrvit/fusion.hpp"
#include "hrvit/graph.hpp"
#include "hrvit/oracles.hpp"

namespace hrvit {

namespace {

constexpr double kOracleTol = 1e-10;

int pick(SplitMix64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.next() % static_cast<std::uint64_t>(hi - lo + 1));
}

void randomize(const ParamList& params, SplitMix64& rng, double std) {
  for (const auto& [name, t] : params) {
    Tensor copy = t;
    for (auto& v : copy.mutable_data()) v = rng.normal() * std;
  }
}

CheckReport at_most(const std::string& suite, const std::string& name, double measured, double tol,
                    std::string detail = "") {
  return {suite, name, measured, tol, measured <= tol, std::move(detail)};
}

CheckReport exact(const std::string& suite, const std::string& name, bool ok, std::string detail = "") {
  return {suite, name, ok ? 0.0 : 1.0, 0.0, ok, std::move(detail)};
}

CheckReport in_band(const std::string& suite, const std::string& name, double ratio, double lo, double hi) {
  std::ostringstream d;
  d << "band [" << lo << ", " << hi << "]";
  return {suite, name, ratio, hi, ratio >= lo && ratio <= hi, d.str()};
}

}  // namespace

ArchConfig fuzz_config(SplitMix64& rng) {
  ArchConfig c;
  c.name = "fuzz";
  c.num_stages = pick(rng, 1, 4);
  for (int b = 0; b < c.num_stages; ++b) {
    const std::int64_t d = pick(rng, 1, 2) * 2;
    const std::int64_t heads = 2 * pick(rng, 1, 2);
    c.head_dims.push_back(d);
    c.channels.push_back(d * heads);
    c.windows.push_back(pick(rng, 1, 4));
    c.mixcfn_ratios.push_back(pick(rng, 1, 3));
    c.modules_per_stage.push_back(pick(rng, 1, 2));
  }
  c.blocks.resize(c.num_stages);
  for (int s = 0; s < c.num_stages; ++s) {
    for (int m = 0; m < c.modules_per_stage[s]; ++m) {
      std::vector<int> counts;
      for (int b = 0; b <= s; ++b) counts.push_back(pick(rng, 0, 2));
      c.blocks[s].push_back(counts);
    }
  }
  auto coin = [&rng] { return (rng.next() & 1) != 0; };
  c.toggles.share_kv = coin();
  c.toggles.eff_patch_embed = coin();
  c.toggles.mixcfn = coin();
  c.toggles.parallel_conv = coin();
  c.toggles.extra_nl_bn = coin();
  c.toggles.dense_fusion = coin();
  c.toggles.des = coin();
  c.max_drop_path = rng.uniform(0.0, 0.5);
  c.relaxed_assignment = true;
  c.validate();
  return c;
}

std::vector<CheckReport> oracle_suite(std::uint64_t seed, int instances) {
  const std::string suite = "oracle";
  std::vector<CheckReport> out;
  SplitMix64 rng(seed);
  for (int i = 0; i < instances; ++i) {
    const auto tag = "#" + std::to_string(i);
    {
      const int g = pick(rng, 1, 2), k = 2 * pick(rng, 0, 2) + 1, stride = pick(rng, 1, 2);
      const int pad = pick(rng, 0, k / 2);
      const std::int64_t cin = g * pick(rng, 1, 3), cout = g * pick(rng, 1, 3);
      Tensor x = randn({pick(rng, 1, 2), cin, pick(rng, k, 7), pick(rng, k, 7)}, rng);
      Tensor w = randn({cout, cin / g, k, k}, rng);
      Tensor b = randn({cout}, rng);
      std::ostringstream d;
      d << "x" << to_string(x.shape()) << " k=" << k << " s=" << stride << " p=" << pad << " g=" << g;
      out.push_back(at_most(suite, "conv2d" + tag,
                            max_abs_diff(conv2d(x, w, b, stride, pad, g),
                                         oracle::conv2d(x, w, b, stride, pad, g)),
                            kOracleTol, d.str()));
    }
    {
      Tensor a = randn({pick(rng, 1, 6), pick(rng, 1, 6)}, rng);
      Tensor b = randn({a.dim(1), pick(rng, 1, 6)}, rng);
      out.push_back(at_most(suite, "matmul" + tag, max_abs_diff(matmul(a, b), oracle::matmul(a, b)),
                            kOracleTol));
    }
    {
      const std::int64_t d = pick(rng, 1, 3), heads = 2 * pick(rng, 1, 2);
      const std::int64_t batch = pick(rng, 1, 2), wh = pick(rng, 1, 3), ww = pick(rng, 2, 4);
      const Shape shape{batch, heads * d, wh, ww};
      Tensor q = randn(shape, rng), k = randn(shape, rng), v = randn(shape, rng);
      const std::int64_t len = wh * ww;
      Mask m{{batch, len}, std::vector<std::uint8_t>(batch * len, 0)};
      for (std::int64_t b = 0; b < batch; ++b) {
        const int padded = pick(rng, 0, static_cast<int>(len) - 1);
        for (std::int64_t p = len - padded; p < len; ++p) m.bits[b * len + p] = 1;
      }
      out.push_back(at_most(suite, "windowed_mhsa" + tag,
                            max_abs_diff(windowed_mhsa(q, k, v, d, m, true),
                                         oracle::windowed_mhsa(q, k, v, d, m.bits)),
                            kOracleTol, to_string(shape) + " padded=" + std::to_string(m.count())));
    }
    {
      AttnConfig cfg{4 * pick(rng, 1, 2), pick(rng, 1, 3), 2};
      cfg.share_kv = rng.next() & 1;
      cfg.use_parallel_conv = rng.next() & 1;
      cfg.use_des = rng.next() & 1;
      cfg.use_extra_nonlinearity_bn = rng.next() & 1;
      auto w = make_attn(cfg, rng);
      randomize(attn_parameters(w), rng, 0.5);
      Tensor x = randn({1, cfg.channels, pick(rng, 2, 7), pick(rng, 2, 7)}, rng);
      out.push_back(at_most(suite, "cross_window_attention" + tag,
                            max_abs_diff(hrvit_attn_forward(x, cfg, w), oracle::attn_block(x, cfg, w)),
                            kOracleTol,
                            "x" + to_string(x.shape()) + " s=" + std::to_string(cfg.window)));
    }
    {
      static const std::int64_t widths[] = {4, 6, 8, 9, 12, 15, 16, 20};
      const std::int64_t c = widths[pick(rng, 0, 7)];
      DESWeights w = make_des(c, rng);
      randomize({{"a", w.a}, {"b", w.b}}, rng, 0.8);
      Tensor x = randn({pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng, 2.0);
      out.push_back(at_most(suite, "des_kronecker" + tag,
                            max_abs_diff(des_forward(x, w), oracle::des(x, w.a, w.b)), kOracleTol,
                            "C=" + std::to_string(c)));
    }
    {
      const std::int64_t c = pick(rng, 2, 6);
      Tensor x = randn({2, c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng, 3.0);
      Tensor gamma = randn({c}, rng), beta = randn({c}, rng);
      out.push_back(at_most(suite, "layer_norm" + tag,
                            max_abs_diff(layer_norm(x, gamma, beta, 1e-5, 1),
                                         oracle::layer_norm_channels(x, gamma, beta, 1e-5)),
                            kOracleTol));
    }
  }
  return out;
}

std::vector<CheckReport> invariant_suite(std::uint64_t seed) {
  const std::string suite = "invariant";
  std::vector<CheckReport> out;
  SplitMix64 rng(seed);

  // Shapes that force padding in both orientations.
  const std::vector<std::tuple<int, int, int>> uneven{{5, 7, 2}, {9, 6, 4}, {11, 13, 3}, {7, 7, 4}};
  for (auto [h, w, s] : uneven) {
    AttnConfig cfg{8, s, 2};
    auto wt = make_attn(cfg, rng);
    randomize(attn_parameters(wt), rng, 0.3);
    Tensor x = randn({1, 8, h, w}, rng);
    Tensor y = hrvit_attn_forward(x, cfg, wt);
    bool finite = std::all_of(y.data().begin(), y.data().end(), [](double v) { return std::isfinite(v); });
    const auto name = "shape_preserved." + std::to_string(h) + "x" + std::to_string(w) + ".s" +
                      std::to_string(s);
    out.push_back(exact(suite, name, y.shape() == x.shape() && finite, to_string(y.shape())));
  }

  // Padded keys get exactly zero weight: with one-hot values the output
  // reads the attention weights back.
  {
    const std::int64_t h = 5, w = 3;
    const int s = 2;
    Tensor map = randn({1, 12, h, w}, rng);
    auto win = window_partition(map, s, Orientation::kHorizontal);
    const auto len = win.layout.positions();
    const auto batch = win.layout.count;
    const std::int64_t d = len;
    Tensor q = randn({batch, 2 * d, s, w}, rng), k = randn({batch, 2 * d, s, w}, rng);
    std::vector<double> onehot(batch * 2 * d * len, 0.0);
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t head = 0; head < 2; ++head)
        for (std::int64_t p = 0; p < len; ++p) onehot[((b * 2 + head) * d + p) * len + p] = 1.0;
    Tensor v({batch, 2 * d, s, w}, onehot);
    Tensor o = windowed_mhsa(q, k, v, d, win.pad_mask);
    bool zero_keys = true, zero_rows = true;
    double row_sum_err = 0.0;
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t head = 0; head < 2; ++head)
        for (std::int64_t p = 0; p < len; ++p) {
          const bool query_pad = win.pad_mask.bits[b * len + p];
          double total = 0.0;
          for (std::int64_t key = 0; key < len; ++key) {
            const double weight = o.data()[((b * 2 + head) * d + key) * len + p];
            total += weight;
            if (win.pad_mask.bits[b * len + key] && weight != 0.0) zero_keys = false;
            if (query_pad && weight != 0.0) zero_rows = false;
          }
          if (!query_pad) row_sum_err = std::max(row_sum_err, std::abs(total - 1.0));
        }
    out.push_back(exact(suite, "mask.padded_key_weight_zero", zero_keys,
                        std::to_string(win.pad_mask.count()) + " padded positions"));
    out.push_back(exact(suite, "mask.padded_query_rows_zero", zero_rows));
    out.push_back(at_most(suite, "mask.valid_rows_sum_to_one", row_sum_err, 1e-12));
  }
  {
    Tensor q = Tensor::zeros({1, 2, 1, 2});
    bool thrown = false;
    try {
      windowed_mhsa(q, q, q, 2, Mask{{1, 2}, {1, 1}});
    } catch (const StructuralError&) {
      thrown = true;
    }
    out.push_back(exact(suite, "mask.fully_padded_window_rejected", thrown));
  }

  // Definitional equivalences.
  {
    AttnConfig shared{8, 2, 4};
    auto ws = make_attn(shared, rng);
    randomize(attn_parameters(ws), rng, 0.5);
    AttnConfig unshared = shared;
    unshared.share_kv = false;
    AttnWeights wu = ws;
    wu.key = ws.value;
    Tensor x = randn({1, 8, 5, 6}, rng);
    out.push_back(exact(suite, "kv_share_equivalence",
                        bit_identical(hrvit_attn_forward(x, unshared, wu), hrvit_attn_forward(x, shared, ws))));

    AttnConfig forced = shared;
    forced.force_mask = true;
    Tensor y = randn({1, 8, 6, 4}, rng);
    out.push_back(exact(suite, "forced_mask_equivalence",
                        bit_identical(hrvit_attn_forward(y, forced, ws), hrvit_attn_forward(y, shared, ws))));

    auto fresh = make_attn(shared, rng);
    AttnTrace trace;
    hrvit_attn_forward(x, shared, fresh, &trace);
    out.push_back(exact(suite, "bn_identity_at_init", bit_identical(trace.pre_bn, trace.post_bn)));
  }
  {
    FusionSpec spec{{4, 8, 16}, {4, 8, 16, 32}, true};
    auto w = make_fusion(spec, rng);
    randomize(fusion_parameters(w), rng, 0.3);
    std::vector<Tensor> in{randn({1, 4, 16, 16}, rng), randn({1, 8, 8, 8}, rng), randn({1, 16, 4, 4}, rng)};
    auto fused = fusion_forward(in, spec, w);
    double err = 0.0;
    for (int j = 0; j < spec.out_branches(); ++j) {
      Tensor acc = fusion_path_forward(in[0], w.paths[0][j]);
      for (int i = 1; i < spec.in_branches(); ++i) acc = add(acc, fusion_path_forward(in[i], w.paths[i][j]));
      err = std::max(err, max_abs_diff(acc, fused[j]));
    }
    out.push_back(at_most(suite, "fusion_additivity", err, 1e-12));
  }
  {
    bool ok = true;
    std::string worst;
    for (auto [h, w, s] : std::vector<std::tuple<int, int, int>>{{7, 5, 3}, {4, 4, 2}, {1, 9, 4}, {6, 11, 5}}) {
      Tensor x = randn({2, 3, h, w}, rng);
      for (auto o : {Orientation::kHorizontal, Orientation::kVertical}) {
        auto win = window_partition(x, s, o);
        if (!bit_identical(crop(window_merge(win.tensor, win.layout), h, w), x)) {
          ok = false;
          worst = to_string(x.shape()) + " s=" + std::to_string(s);
        }
      }
    }
    out.push_back(exact(suite, "partition_merge_roundtrip", ok, worst));
  }
  return out;
}

std::vector<CheckReport> scaling_suite() {
  const std::string suite = "scaling";
  std::vector<CheckReport> out;
  const ArchConfig b1 = build_variant("b1");
  const double c1 = static_cast<double>(b1.channels[0]);
  for (int b = 0; b < b1.num_branches(); ++b) {
    AttnConfig cfg{b1.channels[b], b1.windows[b], b1.head_dims[b]};
    auto exact_at = [&](std::int64_t hw) {
      return static_cast<double>(attention_block_macs(cfg, hw >> b, hw >> b));
    };
    auto predicted = [&](double hw) {
      return asymptotic_cost(b + 1, c1, hw, hw, cfg.window, b1.mixcfn_ratios[b]).flops_attn;
    };
    auto window_term = [&](double hw) {
      return c1 * hw * hw * (2 * hw) * cfg.window / std::ldexp(1.0, 2 * b);
    };
    const auto tag = ".b" + std::to_string(b + 1);
    for (std::int64_t hw : {64, 128, 256, 512}) {
      out.push_back(in_band(suite, "attn_vs_asymptotic" + tag + ".H" + std::to_string(hw),
                            exact_at(hw) / predicted(hw), 0.25, 4.0));
    }
    for (std::int64_t hw : {64, 128, 256}) {
      const double growth = exact_at(2 * hw) - 4 * exact_at(hw);
      const double window_growth = window_term(2.0 * hw) - 4 * window_term(hw);
      out.push_back(in_band(suite, "attn_growth_vs_window_term" + tag + ".H" + std::to_string(hw),
                            growth / window_growth, 0.25, 4.0));
    }
  }

  const std::vector<int> sizes{5, 7, 9, 11, 13, 15};
  const auto sweep = window_sweep(b1, sizes, 512, 512);
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    const auto name = "window_sweep.s" + std::to_string(sweep[i - 1].window) + "<s" + std::to_string(sweep[i].window);
    out.push_back(exact(suite, name, sweep[i].totals.flops > sweep[i - 1].totals.flops,
                        std::to_string(sweep[i - 1].totals.flops) + " -> " + std::to_string(sweep[i].totals.flops)));
  }
  {
    bool same = true;
    for (const auto& row : sweep) {
      same = same && row.totals.flops - row.attention_flops ==
                         sweep.front().totals.flops - sweep.front().attention_flops;
    }
    out.push_back(exact(suite, "window_sweep.only_attention_rows_change", same));
  }

  // Parameters ignore resolution; FLOPs grow with H, W, r and C.
  {
    const auto small = formula_cost(b1, 1000, 224, 224), large = formula_cost(b1, 1000, 512, 512);
    out.push_back(exact(suite, "params_resolution_invariant", small.totals.params == large.totals.params));
    bool mono = true;
    std::int64_t prev = 0;
    for (std::int64_t h = 32; h <= 512; h += 32) {
      const auto f = formula_cost(b1, 1000, h, 256).totals.flops;
      if (f < prev) mono = false;
      prev = f;
    }
    out.push_back(exact(suite, "flops_monotone_in_H", mono));
    ArchConfig wider = b1, richer = b1;
    for (auto& c : wider.channels) c *= 2;
    for (auto& r : richer.mixcfn_ratios) r += 1;
    const auto base = formula_cost(b1, std::nullopt, 224, 224).totals.flops;
    out.push_back(exact(suite, "flops_monotone_in_C", formula_cost(wider, std::nullopt, 224, 224).totals.flops >= base));
    out.push_back(exact(suite, "flops_monotone_in_r", formula_cost(richer, std::nullopt, 224, 224).totals.flops >= base));
  }
  return out;
}

std::vector<CheckReport> counting_suite(std::uint64_t seed, int fuzzed_configs) {
  const std::string suite = "counting";
  std::vector<CheckReport> out;
  SplitMix64 rng(seed);

  auto compare_params = [&](const std::string& name, const LayerGraph& g, const CostReport& r) {
    const auto traversal = traversal_params(g);
    std::int64_t worst = traversal.size() == r.rows.size() ? 0 : 1;
    std::string where;
    for (std::size_t i = 0; i < std::min(traversal.size(), r.rows.size()); ++i) {
      const auto diff = std::abs(traversal[i] - r.rows[i].params);
      if (diff > worst) {
        worst = diff;
        where = r.rows[i].path;
      }
    }
    out.push_back(exact(suite, name + ".params", worst == 0 && count_params(g) == r.totals.params,
                        worst ? "first mismatch at " + where : std::to_string(r.totals.params)));
  };
  auto compare_flops = [&](const std::string& name, const LayerGraph& g, const CostReport& r,
                           std::int64_t h, std::int64_t w) {
    const auto counted = instrumented_cost(g, h, w, seed);
    bool ok = counted.size() == r.rows.size();
    std::string where;
    for (std::size_t i = 0; ok && i < counted.size(); ++i) {
      if (counted[i].macs != r.rows[i].flops || counted[i].elementwise != r.rows[i].elementwise) {
        ok = false;
        where = r.rows[i].path + ": counted " + std::to_string(counted[i].macs) + "/" +
                std::to_string(counted[i].elementwise) + " formula " + std::to_string(r.rows[i].flops) +
                "/" + std::to_string(r.rows[i].elementwise);
      }
    }
    out.push_back(exact(suite, name + ".flops", ok, ok ? std::to_string(r.totals.flops) : where));
  };

  for (int i = 0; i < fuzzed_configs; ++i) {
    ArchConfig cfg = fuzz_config(rng);
    cfg.name = "fuzz" + std::to_string(i);
    const std::int64_t unit = 4LL << (cfg.num_branches() - 1);
    const std::int64_t h = unit * pick(rng, 1, 2), w = unit * pick(rng, 1, 3);
    std::optional<std::int64_t> classes;
    if (pick(rng, 0, 7) == 0) classes = pick(rng, 2, 10);
    const auto g = build_graph(cfg, classes, rng.next());
    const auto report = formula_cost(cfg, classes, h, w);
    const auto name = cfg.name + "." + std::to_string(h) + "x" + std::to_string(w);
    compare_params(name, g, report);
    compare_flops(name, g, report, h, w);
  }
  for (const auto& v : variant_names()) {
    const auto g = build_graph(build_variant(v), 1000, seed);
    compare_params(v + ".cls1000", g, formula_cost(g.config, 1000, 224, 224));
  }
  {
    const auto g = build_graph(build_variant("b1", true), 10, seed);
    compare_flops("b1.cityscapes_windows.64x96", g, formula_cost(g.config, 10, 64, 96), 64, 96);
  }
  return out;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"grad", "oracle", "invariant", "scaling", "counting"};
  return names;
}

std::vector<CheckReport> run_suite(const std::string& suite, std::uint64_t seed) {
  if (suite == "grad") return grad_suite(seed);
  if (suite == "oracle") return oracle_suite(seed);
  if (suite == "invariant") return invariant_suite(seed);
  if (suite == "scaling") return scaling_suite();
  if (suite == "counting") return counting_suite(seed);
  if (suite == "all") {
    std::vector<CheckReport> out;
    for (const auto& name : suite_names()) {
      auto part = run_suite(name, seed);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  throw ConfigError("unknown suite '" + suite + "' (expected grad, oracle, invariant, scaling, counting or all)");
}

}  // namespace hrvit
