#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "hrvit/checks.hpp"
#include "hrvit/config.hpp"
#include "hrvit/cost.hpp"
#include "hrvit/graph.hpp"

using namespace hrvit;

namespace {

double within(double measured, double target) { return std::abs(measured / target - 1.0); }

ArchConfig tiny_config() {
  ArchConfig c = build_variant("b1");
  c.name = "tiny";
  c.channels = {4, 8, 8, 16};
  c.head_dims = {2, 2, 2, 4};
  c.mixcfn_ratios = {2, 2, 2, 2};
  c.blocks[2] = {{1, 1, 1}, {1, 0, 1}, {0, 1, 1}};
  c.blocks[3] = {{1, 1, 1, 1}};
  c.windows = {1, 2, 3, 3};
  return c;
}

}  // namespace

TEST_CASE("variants") {
  const auto b1 = build_variant("b1");
  CHECK(b1.channels == std::vector<std::int64_t>{32, 64, 128, 256});
  CHECK(b1.num_branches() == 4);
  CHECK(b1.third_branch_assignment() == std::vector<int>{6, 6, 6, 2});
  CHECK(build_variant("b3", true).windows == std::vector<int>{1, 2, 9, 9});
  CHECK_THROWS_AS(build_variant("b4"), ConfigError);
}

TEST_CASE("config text round-trips and reports problems by line") {
  for (const auto& v : variant_names()) {
    const auto cfg = build_variant(v);
    CHECK(parse_config(serialize_config(cfg)) == cfg);
    CHECK(config_from_json(config_to_json(cfg)) == cfg);
  }
  CHECK_THROWS_AS(config_from_json("{\"name\": \"x\"}"), ConfigError);
  auto text = serialize_config(build_variant("b1"));
  const auto pos = text.find("windows");
  const auto end = text.find('\n', pos);
  auto missing = text;
  missing.erase(pos, end - pos + 1);
  try {
    parse_config(missing, "custom.cfg");
    FAIL("missing key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("windows") != std::string::npos);
  }
  try {
    parse_config(text + "bogus = 1\n", "custom.cfg");
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    const auto lines = std::count(text.begin(), text.end(), '\n');
    CHECK(std::string(e.what()).find("custom.cfg:" + std::to_string(lines + 1)) != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("nearly-even assignment validator") {
  CHECK(validate_assignment(20, {6, 6, 6, 2}, false).ok);
  CHECK(validate_assignment(20, {5, 5, 5, 5}, false).ok);
  CHECK_FALSE(validate_assignment(20, {17, 1, 1, 1}, false).ok);
  CHECK(validate_assignment(20, {17, 1, 1, 1}, true).ok);
  CHECK_THROWS_AS(validate_assignment(20, {6, 6, 6}, false), ConfigError);

  auto cfg = build_variant("b1");
  cfg.blocks[2] = {{1, 1, 17}, {1, 1, 1}, {1, 1, 1}};
  cfg.blocks[3] = {{1, 1, 1, 4}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.relaxed_assignment = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("drop-path schedule") {
  const auto cfg = build_variant("b1");
  const auto rates = drop_path_schedule(cfg);
  double last = -1.0, peak = 0.0;
  for (const auto& r : rates) {
    if (r.branch == 2) {
      CHECK(r.rate >= last);
      last = r.rate;
    }
    peak = std::max(peak, r.rate);
    if (r.stage < 2) CHECK(r.rate == 0.0);
  }
  CHECK(peak == doctest::Approx(cfg.max_drop_path));
}

TEST_CASE("graph build is deterministic and b1 produces the expected maps") {
  const auto cfg = build_variant("b1");
  const auto a = build_graph(cfg, std::nullopt, 3), b = build_graph(cfg, std::nullopt, 3);
  REQUIRE(a.nodes.size() == b.nodes.size());
  const auto pa = node_parameters(a.nodes[5]), pb = node_parameters(b.nodes[5]);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_identical(pa[i].second, pb[i].second));

  SplitMix64 rng(1);
  const auto out = forward(a, randn({1, 3, 224, 224}, rng));
  REQUIRE(out.features.size() == 4);
  CHECK(out.features[0].shape() == Shape{1, 32, 56, 56});
  CHECK(out.features[1].shape() == Shape{1, 64, 28, 28});
  CHECK(out.features[2].shape() == Shape{1, 128, 14, 14});
  CHECK(out.features[3].shape() == Shape{1, 256, 7, 7});
  CHECK_THROWS_AS(forward(a, randn({1, 3, 100, 224}, rng)), ConfigError);
}

TEST_CASE("node paths locate failures") {
  const auto g = build_graph(tiny_config(), 5, 0);
  CHECK(g.nodes.front().path() == "stem");
  CHECK(g.nodes.back().path() == "head");
  bool found = false;
  for (const auto& n : g.nodes) found = found || n.path() == "s3.m2.b3.blk1.attention";
  CHECK(found);
}

TEST_CASE("parameter counting: per-layer arithmetic and two independent paths") {
  SplitMix64 rng(0);
  CHECK(count_elements(patch_embed_parameters(make_patch_embed(32, 64, true, rng))) ==
        32 * 64 + 64 + 9 * 64 + 64 + 2 * 64);
  const auto cfg = tiny_config();
  const auto g = build_graph(cfg, 7, 11);
  const auto formula = formula_cost(cfg, 7, 32, 64);
  const auto traversal = traversal_params(g);
  REQUIRE(traversal.size() == formula.rows.size());
  for (std::size_t i = 0; i < traversal.size(); ++i) {
    INFO(formula.rows[i].path);
    CHECK(traversal[i] == formula.rows[i].params);
  }
  CHECK(count_params(g) == formula.totals.params);
  CHECK(formula_cost(cfg, 7, 64, 64).totals.params == formula.totals.params);
}

TEST_CASE("formula FLOPs equal the instrumented counter node by node") {
  for (bool dense : {true, false}) {
    auto cfg = tiny_config();
    cfg.toggles.dense_fusion = dense;
    cfg.toggles.share_kv = !dense;
    const auto g = build_graph(cfg, 3, 2);
    const auto formula = formula_cost(cfg, 3, 64, 96);
    const auto counted = instrumented_cost(g, 64, 96);
    REQUIRE(counted.size() == formula.rows.size());
    for (std::size_t i = 0; i < counted.size(); ++i) {
      INFO(formula.rows[i].path);
      CHECK(counted[i].macs == formula.rows[i].flops);
      CHECK(counted[i].elementwise == formula.rows[i].elementwise);
    }
  }
}

TEST_CASE("single-layer FLOP examples") {
  // Window logits and weighted sums: 2·M·heads·L²·d per orientation.
  AttnConfig cfg{8, 2, 2, true, false, false, false};
  const std::int64_t h = 6, w = 4, c = 8;
  const std::int64_t projections = 3 * h * w * c * c;
  const std::int64_t horizontal = 2 * (h / 2) * 2 * (2 * w) * (2 * w) * 2;
  const std::int64_t vertical = 2 * (w / 2) * 2 * (2 * h) * (2 * h) * 2;
  CHECK(attention_block_macs(cfg, h, w) == projections + horizontal + vertical);
  CHECK(horizontal + vertical == c * h * w * 2 * (h + w));
}

TEST_CASE("published cost targets") {
  const double params[] = {19.7e6, 32.5e6, 37.9e6};
  const double flops[] = {2.7e9, 5.1e9, 5.7e9};
  for (int i = 0; i < 3; ++i) {
    const auto r = formula_cost(build_variant(variant_names()[i]), 1000, 224, 224);
    INFO(variant_names()[i]);
    CHECK(within(r.totals.params, params[i]) <= 0.10);
    CHECK(within(r.totals.flops, flops[i]) <= 0.15);
  }
}

TEST_CASE("ablation signs and key-value magnitude") {
  const auto b1 = build_variant("b1");
  auto row = [&](Ablation a) { return ablation_report(b1, a, 512, 512); };
  const auto kv = row(Ablation::kShareKV);
  CHECK(within(kv.delta_params(), 0.7e6) <= 0.25);
  CHECK(within(kv.delta_flops(), 0.6e9) <= 0.25);
  CHECK(row(Ablation::kEffPatchEmbed).delta_params() > 0);
  CHECK(row(Ablation::kMixCFN).delta_flops() < 0);
  CHECK(row(Ablation::kDenseFusion).delta_flops() < 0);
  CHECK(row(Ablation::kAll).delta_params() > 0);
  const auto dense = row(Ablation::kDenseFusion);
  CHECK(-dense.delta_flops() < 0.01 * dense.base.flops);
  CHECK(-dense.delta_params() < 0.01 * dense.base.params);
  // DES overhead relative to the whole classifier at 224x224.
  const auto des = ablation_report(b1, Ablation::kDES, 224, 224, 1000);
  CHECK(des.delta_flops() < 0);
  CHECK(-des.delta_flops() < 0.01 * des.base.flops);
  CHECK(remove_technique(b1, Ablation::kAll).toggles == Toggles{false, false, false, false, false, false, false});
  CHECK(parse_ablation("des") == Ablation::kDES);
  CHECK_THROWS_AS(parse_ablation("nope"), ConfigError);
}

TEST_CASE("TSV and JSON carry the same totals") {
  const auto r = formula_cost(build_variant("b1"), 1000, 224, 224);
  const auto j = nlohmann::json::parse(to_json(r));
  CHECK(j["totals"]["params"].get<std::int64_t>() == r.totals.params);
  CHECK(j["rows"].size() == r.rows.size());
  CHECK(j["rows"][0]["module"].is_null());
  const auto tsv = to_tsv(r);
  CHECK(tsv.find("# total_params\t" + std::to_string(r.totals.params)) != std::string::npos);
  CHECK(tsv.find("node_id\tkind\tbranch\tstage\tmodule\tparams\tflops") != std::string::npos);
}

TEST_CASE("asymptotic terms") {
  const auto a = asymptotic_cost(2, 32, 64, 64, 7, 4), b = asymptotic_cost(2, 32, 128, 128, 7, 4);
  const double window_a = a.flops_attn - 64.0 * 64 * 32 * 32, window_b = b.flops_attn - 128.0 * 128 * 32 * 32;
  CHECK(window_b / window_a == doctest::Approx(8.0));
  CHECK(asymptotic_cost(1, 32, 64, 64, 7, 6).params_mixcfn ==
        doctest::Approx(2 * asymptotic_cost(1, 32, 64, 64, 7, 3).params_mixcfn));
}

TEST_CASE("fuzzed configs validate and build") {
  SplitMix64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto cfg = fuzz_config(rng);
    CHECK_NOTHROW(build_graph(cfg, std::nullopt, i));
  }
}
