#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "hrvit/attention.hpp"
#include "hrvit/blocks.hpp"
#include "hrvit/checks.hpp"
#include "hrvit/fusion.hpp"
#include "hrvit/head.hpp"

namespace hrvit {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
    m = std::max(m, d);
  }
  return m;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; });
}

Tensor randn_away_from(const Shape& shape, SplitMix64& rng, double std,
                       const std::vector<double>& kinks, double margin) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    bool near = true;
    while (near) {
      x = rng.normal() * std;
      near = std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(x - k) <= margin; });
    }
  }
  return Tensor(shape, std::move(v));
}

namespace {

/// Overwrites every parameter with N(0, std²) so gradients are not dwarfed by
/// the tiny initialization scale.
void randomize(const ParamList& params, SplitMix64& rng, double std) {
  for (const auto& [name, t] : params) {
    Tensor copy = t;
    for (auto& v : copy.mutable_data()) v = rng.normal() * std;
  }
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamList& params) {
  for (const auto& [name, t] : params) inputs.push_back(t);
  return inputs;
}

Tensor concat_flat(const std::vector<Tensor>& parts) {
  std::vector<Tensor> flat;
  for (const auto& t : parts) flat.push_back(reshape(t, {t.numel()}));
  return concat(flat, 0);
}

GradCheckOptions capped(std::uint64_t seed, std::int64_t cap = 48) {
  GradCheckOptions o;
  o.max_coords_per_tensor = cap;
  o.seed = seed;
  return o;
}

}  // namespace

std::vector<GradCheckResult> op_grad_checks(SplitMix64& rng) {
  std::vector<GradCheckResult> out;
  auto unary = [&](const std::string& name, Tensor x, std::function<Tensor(const Tensor&)> f) {
    out.push_back(grad_check(name, f, std::move(x)));
  };
  auto multi = [&](const std::string& name, std::vector<Tensor> wrt, std::function<Tensor()> f) {
    out.push_back(grad_check(name, f, std::move(wrt)));
  };

  {
    Tensor a = randn({2, 3, 4}, rng), b = randn({4, 2}, rng);
    multi("matmul", {a, b}, [=] { return matmul(a, b); });
    Tensor c = randn({2, 1, 3, 4}, rng), d = randn({3, 4, 2}, rng);
    multi("matmul_broadcast", {c, d}, [=] { return matmul(c, d); });
  }
  struct ConvCase { const char* name; std::int64_t cin, cout, k; int stride, pad, groups; };
  for (auto cc : {ConvCase{"conv2d", 3, 4, 3, 1, 1, 1}, ConvCase{"conv2d_strided", 2, 3, 3, 2, 1, 1},
                  ConvCase{"conv2d_depthwise", 3, 3, 5, 1, 2, 3},
                  ConvCase{"conv2d_grouped", 4, 6, 3, 2, 0, 2},
                  ConvCase{"conv2d_pointwise", 3, 5, 1, 1, 0, 1}}) {
    Tensor x = randn({2, cc.cin, 5, 5}, rng);
    Tensor w = randn({cc.cout, cc.cin / cc.groups, cc.k, cc.k}, rng);
    Tensor b = randn({cc.cout}, rng);
    multi(cc.name, {x, w, b}, [=] { return conv2d(x, w, b, cc.stride, cc.pad, cc.groups); });
  }
  {
    Tensor a = randn({2, 3, 4}, rng), b = randn({3, 1}, rng);
    multi("add_broadcast", {a, b}, [=] { return add(a, b); });
    multi("sub_broadcast", {a, b}, [=] { return sub(a, b); });
    multi("mul_broadcast", {a, b}, [=] { return mul(a, b); });
  }
  unary("scale", randn({3, 3}, rng), [](const Tensor& t) { return scale(t, -1.7); });
  {
    Mask m{{1, 4}, {1, 0, 0, 1}};
    unary("masked_fill", randn({3, 4}, rng), [=](const Tensor& t) { return masked_fill(t, m, 0.5); });
  }
  unary("reshape", randn({2, 6}, rng), [](const Tensor& t) { return reshape(t, {3, 4}); });
  unary("permute", randn({2, 3, 4}, rng), [](const Tensor& t) { return permute(t, {2, 0, 1}); });
  unary("transpose", randn({2, 3, 4}, rng), [](const Tensor& t) { return transpose(t); });
  unary("slice", randn({2, 5, 3}, rng), [](const Tensor& t) { return slice(t, 1, 1, 3); });
  {
    Tensor a = randn({2, 2, 3}, rng), b = randn({2, 4, 3}, rng);
    multi("concat", {a, b}, [=] { return concat({a, b}, 1); });
  }
  unary("pad_zeros", randn({1, 2, 3, 3}, rng), [](const Tensor& t) { return pad_zeros(t, 2, 1); });
  unary("crop", randn({1, 2, 4, 5}, rng), [](const Tensor& t) { return crop(t, 3, 2); });
  unary("nearest_upsample", randn({1, 2, 2, 3}, rng),
        [](const Tensor& t) { return nearest_upsample(t, 2); });
  unary("sum", randn({3, 4}, rng), [](const Tensor& t) { return sum(t); });
  unary("global_avg_pool", randn({2, 3, 4, 4}, rng),
        [](const Tensor& t) { return global_avg_pool(t); });
  unary("softmax", randn({3, 5}, rng, 2.0), [](const Tensor& t) { return softmax(t, -1); });
  unary("softmax_axis0", randn({4, 3}, rng), [](const Tensor& t) { return softmax(t, 0); });
  {
    Mask m{{1, 5}, {0, 1, 0, 0, 1}};
    unary("softmax_masked", randn({3, 5}, rng), [=](const Tensor& t) {
      return softmax(masked_fill(t, m, -std::numeric_limits<double>::infinity()), -1);
    });
  }
  {
    Tensor x = randn({2, 3, 6}, rng), g = randn({6}, rng), b = randn({6}, rng);
    multi("layer_norm", {x, g, b}, [=] { return layer_norm(x, g, b, 1e-5); });
    Tensor y = randn({2, 4, 3, 3}, rng), g1 = randn({4}, rng), b1 = randn({4}, rng);
    multi("layer_norm_channels", {y, g1, b1}, [=] { return layer_norm(y, g1, b1, 1e-5, 1); });
  }
  {
    Tensor x = randn({2, 3, 2, 2}, rng), g = randn({3}, rng), b = randn({3}, rng);
    Tensor m = randn({3}, rng), v = rand_uniform({3}, rng, 0.5, 2.0);
    multi("batch_norm_inference", {x, g, b}, [=] { return batch_norm_inference(x, g, b, m, v, 1e-5); });
  }
  unary("hardswish", randn_away_from({4, 5}, rng, 3.0, {-3.0, 3.0}),
        [](const Tensor& t) { return hardswish(t); });
  unary("relu", randn_away_from({4, 5}, rng, 1.0, {0.0}), [](const Tensor& t) { return relu(t); });
  unary("gelu", randn({4, 5}, rng, 2.0), [](const Tensor& t) { return gelu(t); });
  return out;
}

std::vector<GradCheckResult> block_grad_checks(SplitMix64& rng) {
  std::vector<GradCheckResult> out;
  const auto seed = rng.next();

  struct AttnCase { const char* name; std::int64_t h, w; int s; bool kv, par, des, nlbn; };
  for (auto ac : {AttnCase{"attn_full", 5, 6, 2, true, true, true, true},
                  AttnCase{"attn_unshared_kv", 5, 6, 2, false, true, true, true},
                  AttnCase{"attn_no_parallel_conv", 5, 6, 2, true, false, true, true},
                  AttnCase{"attn_no_des", 5, 6, 2, true, true, false, true},
                  AttnCase{"attn_no_nl_bn", 5, 6, 2, true, true, true, false},
                  AttnCase{"attn_plain", 6, 6, 3, false, false, false, false},
                  AttnCase{"attn_window1", 3, 4, 1, true, true, true, true}}) {
    AttnConfig cfg{8, ac.s, 4, ac.kv, ac.par, ac.des, ac.nlbn};
    auto w = make_attn(cfg, rng);
    const auto params = attn_parameters(w);
    randomize(params, rng, 0.4);
    Tensor x = randn({1, 8, ac.h, ac.w}, rng);
    out.push_back(grad_check(ac.name, [=] { return hrvit_attn_forward(x, cfg, w); },
                             with_params({x}, params), capped(seed)));
  }
  {
    Tensor q = randn({3, 4, 2, 3}, rng), k = randn({3, 4, 2, 3}, rng), v = randn({3, 4, 2, 3}, rng);
    Mask m{{3, 6}, std::vector<std::uint8_t>(18, 0)};
    for (int i = 3; i < 6; ++i) m.bits[2 * 6 + i] = 1;
    out.push_back(grad_check("windowed_mhsa", [=] { return windowed_mhsa(q, k, v, 2, m); },
                             {q, k, v}));
  }
  {
    Tensor x = randn({1, 6, 3, 2}, rng);
    DESWeights d = make_des(6, rng);
    randomize({{"a", d.a}, {"b", d.b}}, rng, 0.7);
    out.push_back(grad_check("des", [=] { return des_forward(x, d); }, {x, d.a, d.b}));
  }
  for (bool mix : {true, false}) {
    MixCFNConfig cfg{6, 2, mix};
    auto w = make_mixcfn(cfg, rng);
    const auto params = mixcfn_parameters(w);
    randomize(params, rng, 0.4);
    Tensor x = randn({1, 6, 4, 5}, rng);
    out.push_back(grad_check(mix ? "mixcfn" : "mixcfn_plain_ffn",
                             [=] { return mixcfn_forward(x, cfg, w); }, with_params({x}, params),
                             capped(seed)));
  }
  for (bool eff : {true, false}) {
    auto w = make_patch_embed(3, 6, eff, rng);
    const auto params = patch_embed_parameters(w);
    randomize(params, rng, 0.4);
    Tensor x = randn({1, 3, 4, 4}, rng);
    out.push_back(grad_check(eff ? "eff_patch_embed" : "conv_patch_embed",
                             [=] { return eff_patch_embed(x, w); }, with_params({x}, params),
                             capped(seed)));
  }
  {
    auto w = make_stem(3, 4, rng);
    const auto params = stem_parameters(w);
    randomize(params, rng, 0.4);
    Tensor x = randn({1, 3, 8, 8}, rng);
    out.push_back(grad_check("stem", [=] { return stem_forward(x, w); }, with_params({x}, params),
                             capped(seed)));
  }
  for (bool dense : {true, false}) {
    FusionSpec spec{{2, 4, 8}, {2, 4, 8, 16}, dense};
    auto w = make_fusion(spec, rng);
    const auto params = fusion_parameters(w);
    randomize(params, rng, 0.4);
    Tensor a = randn({1, 2, 8, 8}, rng), b = randn({1, 4, 4, 4}, rng), c = randn({1, 8, 2, 2}, rng);
    out.push_back(grad_check(dense ? "fusion_dense" : "fusion_sparse",
                             [=] { return concat_flat(fusion_forward({a, b, c}, spec, w)); },
                             with_params({a, b, c}, params), capped(seed)));
  }
  {
    HeadConfig cfg{{2, 4, 8, 16}, {8, 16, 32, 64}, 32, 4};
    auto w = make_head(cfg, rng);
    const auto params = head_parameters(w);
    randomize(params, rng, 0.3);
    Tensor a = randn({1, 2, 8, 8}, rng), b = randn({1, 4, 4, 4}, rng);
    Tensor c = randn({1, 8, 2, 2}, rng), d = randn({1, 16, 1, 1}, rng);
    out.push_back(grad_check("cls_head", [=] { return cls_head_forward({a, b, c, d}, cfg, w); },
                             with_params({a, b, c, d}, params), capped(seed, 24)));
  }
  return out;
}

std::vector<CheckReport> grad_suite(std::uint64_t seed, int instances) {
  std::vector<CheckReport> out;
  SplitMix64 rng(seed);
  for (int i = 0; i < instances; ++i) {
    auto results = op_grad_checks(rng);
    auto blocks = block_grad_checks(rng);
    results.insert(results.end(), blocks.begin(), blocks.end());
    for (const auto& r : results) {
      out.push_back({"grad", r.op_name + "#" + std::to_string(i), r.max_rel_error, r.tolerance,
                     r.passed, r.detail});
    }
  }
  return out;
}

}  // namespace hrvit
