#include <doctest.h>

#include <cmath>

#include "hrvit/attention.hpp"
#include "hrvit/blocks.hpp"
#include "hrvit/checks.hpp"
#include "hrvit/fusion.hpp"
#include "hrvit/head.hpp"
#include "hrvit/oracles.hpp"

using namespace hrvit;

namespace {

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void randomize(const ParamList& params, SplitMix64& rng, double std) {
  for (const auto& [name, t] : params) {
    Tensor copy = t;
    for (auto& v : copy.mutable_data()) v = rng.normal() * std;
  }
}

}  // namespace

TEST_CASE("window partition shapes and padding masks") {
  SplitMix64 rng(1);
  auto even = window_partition(randn({1, 4, 6, 5}, rng), 2, Orientation::kHorizontal);
  CHECK(even.layout.count == 3);
  CHECK(even.tensor.shape() == Shape{3, 4, 2, 5});
  CHECK_FALSE(even.pad_mask.any());

  auto odd = window_partition(randn({1, 4, 5, 5}, rng), 2, Orientation::kHorizontal);
  CHECK(odd.layout.count == 3);
  CHECK(odd.pad_mask.count() == 5);
  for (int p = 5; p < 10; ++p) CHECK(odd.pad_mask.bits[2 * 10 + p] == 1);

  auto vert = window_partition(randn({2, 4, 3, 7}, rng), 3, Orientation::kVertical);
  CHECK(vert.tensor.shape() == Shape{6, 4, 3, 3});
  CHECK(vert.pad_mask.count() == 2 * 3 * 2);
}

TEST_CASE("partition, merge and crop round-trip exactly") {
  SplitMix64 rng(2);
  Tensor x = randn({1, 4, 7, 5}, rng);
  for (auto o : {Orientation::kHorizontal, Orientation::kVertical}) {
    auto w = window_partition(x, 3, o);
    CHECK(bit_identical(crop(window_merge(w.tensor, w.layout), 7, 5), x));
  }
}

TEST_CASE("windowed attention examples") {
  SplitMix64 rng(3);
  // One position: softmax over one logit is 1, output = value.
  Tensor q = randn({2, 4, 1, 1}, rng), k = randn({2, 4, 1, 1}, rng), v = randn({2, 4, 1, 1}, rng);
  Mask none{{2, 1}, {0, 0}};
  CHECK(max_abs_diff(windowed_mhsa(q, k, v, 2, none), v) < 1e-15);

  // Uniform input gives uniform weights, so the output is the value mean.
  Tensor u = Tensor::full({1, 2, 2, 2}, 0.7);
  Tensor vv = randn({1, 2, 2, 2}, rng);
  auto out = windowed_mhsa(u, u, vv, 2, Mask{{1, 4}, {0, 0, 0, 0}});
  for (int c = 0; c < 2; ++c) {
    double mean = 0;
    for (int p = 0; p < 4; ++p) mean += vv.data()[c * 4 + p] / 4;
    for (int p = 0; p < 4; ++p) CHECK(std::abs(out.data()[c * 4 + p] - mean) < 1e-15);
  }
}

TEST_CASE("windowed attention matches the pairwise oracle") {
  SplitMix64 rng(4);
  for (int t = 0; t < 5; ++t) {
    Tensor q = randn({1, 8, 2, 3}, rng), k = randn({1, 8, 2, 3}, rng), v = randn({1, 8, 2, 3}, rng);
    Mask m{{1, 6}, std::vector<std::uint8_t>(6, 0)};
    if (t % 2) m.bits[5] = m.bits[4] = 1;
    CHECK(max_abs_diff(windowed_mhsa(q, k, v, 4, m, true), oracle::windowed_mhsa(q, k, v, 4, m.bits)) <
          1e-12);
  }
}

TEST_CASE("fully padded window is a structural error") {
  Tensor q = Tensor::zeros({1, 2, 1, 2});
  CHECK_THROWS_AS(windowed_mhsa(q, q, q, 2, Mask{{1, 2}, {1, 1}}), StructuralError);
}

TEST_CASE("DES examples and Kronecker oracle") {
  CHECK(balanced_factorization(32).p == 4);
  CHECK(balanced_factorization(48).p == 6);
  CHECK(balanced_factorization(240).p == 15);
  CHECK(balanced_factorization(384).q == 24);
  CHECK(balanced_factorization(512).q == 32);

  SplitMix64 rng(5);
  DESWeights zero = make_des(8, rng);
  fill(zero.a, 0.0);
  CHECK(max_abs_diff(des_forward(randn({1, 8, 2, 2}, rng), zero), Tensor::zeros({1, 8, 2, 2})) == 0.0);

  DESWeights id{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {1, 0, 0, 1})};
  Tensor big = rand_uniform({1, 4, 3, 3}, rng, 3.0, 9.0);
  CHECK(bit_identical(des_forward(big, id), big));

  for (std::int64_t c : {6, 8, 12, 15}) {
    DESWeights w = make_des(c, rng);
    randomize({{"a", w.a}, {"b", w.b}}, rng, 0.8);
    Tensor x = randn({2, c, 2, 3}, rng);
    CHECK(max_abs_diff(des_forward(x, w), oracle::des(x, w.a, w.b)) < 1e-12);
  }
}

TEST_CASE("attention block shape, equivalences and oracle") {
  SplitMix64 rng(6);
  AttnConfig cfg{32, 7, 16};
  auto w = make_attn(cfg, rng);
  CHECK(hrvit_attn_forward(randn({1, 32, 14, 14}, rng), cfg, w).shape() == Shape{1, 32, 14, 14});

  AttnConfig small{8, 2, 4};
  auto ws = make_attn(small, rng);
  randomize(attn_parameters(ws), rng, 0.5);
  Tensor x = randn({1, 8, 5, 6}, rng);
  CHECK(max_abs_diff(hrvit_attn_forward(x, small, ws), oracle::attn_block(x, small, ws)) < 1e-12);

  // Unshared keys initialized to the value projection reproduce sharing.
  AttnConfig unshared = small;
  unshared.share_kv = false;
  AttnWeights wu = ws;
  wu.key = ws.value;
  CHECK(bit_identical(hrvit_attn_forward(x, unshared, wu), hrvit_attn_forward(x, small, ws)));

  // With H, W multiples of s, forcing the mask path changes nothing.
  Tensor y = randn({1, 8, 6, 4}, rng);
  AttnConfig forced = small;
  forced.force_mask = true;
  CHECK(bit_identical(hrvit_attn_forward(y, forced, ws), hrvit_attn_forward(y, small, ws)));

  // Identity-initialized BN leaves its input untouched.
  auto fresh = make_attn(small, rng);
  AttnTrace trace;
  hrvit_attn_forward(x, small, fresh, &trace);
  CHECK(bit_identical(trace.pre_bn, trace.post_bn));
}

TEST_CASE("attention locality per window") {
  SplitMix64 rng(7);
  AttnConfig cfg{8, 2, 4, true, false, false, false};
  auto w = make_attn(cfg, rng);
  randomize(attn_parameters(w), rng, 0.5);
  Tensor x = randn({1, 8, 6, 6}, rng);
  AttnTrace base, moved;
  hrvit_attn_forward(x, cfg, w, &base);
  Tensor x2 = x.detach();
  Tensor copy = Tensor(x2.shape(), values(x2));
  copy.mutable_data()[(0 * 6 + 5) * 6 + 5] += 1.0;  // channel 0, row 5, col 5
  hrvit_attn_forward(copy, cfg, w, &moved);
  // Horizontal heads (channels 0..3): rows 0..3 are in other strips.
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 6; ++col) {
        const auto i = (c * 6 + r) * 6 + col;
        CHECK(base.attention.data()[i] == moved.attention.data()[i]);
      }
}

TEST_CASE("attention rejects odd head counts") {
  CHECK_THROWS_AS(AttnConfig({24, 7, 8}).validate(), ConfigError);
  CHECK_THROWS_AS(AttnConfig({30, 7, 7}).validate(), ConfigError);
}

TEST_CASE("MixCFN") {
  SplitMix64 rng(8);
  MixCFNConfig cfg{48, 2};
  auto w = make_mixcfn(cfg, rng);
  Tensor x = randn({1, 48, 8, 8}, rng);
  CHECK(mixcfn_forward(x, cfg, w).shape() == Shape{1, 48, 8, 8});
  fill(w.project.weight, 0.0);
  CHECK(bit_identical(mixcfn_forward(x, cfg, w), x));
  CHECK_THROWS_AS(make_mixcfn(MixCFNConfig{3, 1}, rng), ConfigError);
}

TEST_CASE("patch embedding") {
  SplitMix64 rng(9);
  auto w = make_patch_embed(32, 64, true, rng);
  CHECK(eff_patch_embed(randn({1, 32, 8, 8}, rng), w).shape() == Shape{1, 64, 8, 8});
  CHECK(count_elements(patch_embed_parameters(w)) == 32 * 64 + 64 + 9 * 64 + 64 + 2 * 64);
  auto conv = make_patch_embed(32, 64, false, rng);
  CHECK(count_elements(patch_embed_parameters(conv)) == 9 * 32 * 64 + 64 + 2 * 64);
}

TEST_CASE("stem") {
  SplitMix64 rng(10);
  auto w = make_stem(3, 32, rng);
  CHECK(stem_forward(randn({1, 3, 224, 224}, rng), w).shape() == Shape{1, 32, 56, 56});
  auto small = make_stem(3, 4, rng);
  Tensor y = stem_forward(randn({1, 3, 8, 8}, rng), small);
  for (double v : y.data()) CHECK(v >= 0.0);
  CHECK_THROWS_AS(stem_forward(Tensor::zeros({1, 3, 10, 8}), small), ConfigError);
}

TEST_CASE("fusion") {
  SplitMix64 rng(11);
  FusionSpec one{{8}, {8}, true};
  auto w1 = make_fusion(one, rng);
  Tensor x = randn({1, 8, 4, 4}, rng);
  CHECK(bit_identical(fusion_forward({x}, one, w1)[0], x));

  FusionSpec two{{4, 8}, {4, 8}, true};
  auto w2 = make_fusion(two, rng);
  fill(w2.paths[0][1].pointwise.weight, 0.0);
  fill(w2.paths[0][1].pointwise.bias, 0.0);
  fill(w2.paths[1][0].pointwise.weight, 0.0);
  fill(w2.paths[1][0].pointwise.bias, 0.0);
  Tensor a = randn({1, 4, 8, 8}, rng), b = randn({1, 8, 4, 4}, rng);
  auto out2 = fusion_forward({a, b}, two, w2);
  CHECK(max_abs_diff(out2[0], a) == 0.0);
  CHECK(max_abs_diff(out2[1], b) == 0.0);

  FusionSpec three{{8, 16, 32}, {8, 16, 32}, true};
  auto w3 = make_fusion(three, rng);
  randomize(fusion_parameters(w3), rng, 0.3);
  std::vector<Tensor> in{randn({1, 8, 16, 16}, rng), randn({1, 16, 8, 8}, rng),
                         randn({1, 32, 4, 4}, rng)};
  auto out3 = fusion_forward(in, three, w3);
  for (int j = 0; j < 3; ++j) {
    CHECK(out3[j].shape() == in[j].shape());
    Tensor acc = fusion_path_forward(in[0], w3.paths[0][j]);
    for (int i = 1; i < 3; ++i) acc = add(acc, fusion_path_forward(in[i], w3.paths[i][j]));
    CHECK(max_abs_diff(acc, out3[j]) <= 1e-12);
  }

  FusionSpec grow{{8, 16, 32}, {8, 16, 32, 64}, false};
  auto wg = make_fusion(grow, rng);
  auto outg = fusion_forward(in, grow, wg);
  CHECK(outg[3].shape() == Shape{1, 64, 2, 2});
  CHECK(wg.paths[0][3].kind == PathKind::kNone);
  CHECK(wg.paths[2][3].kind == PathKind::kDown);
  CHECK(wg.paths[0][2].kind == PathKind::kNone);

  std::vector<Tensor> bad{randn({1, 8, 16, 16}, rng), randn({1, 16, 6, 6}, rng),
                          randn({1, 32, 4, 4}, rng)};
  CHECK_THROWS_AS(fusion_forward(bad, three, w3), ShapeError);
}

TEST_CASE("classification head") {
  SplitMix64 rng(12);
  HeadConfig cfg{{32, 64, 128, 256}};
  auto w = make_head(cfg, rng);
  std::vector<Tensor> feats{randn({1, 32, 56, 56}, rng), randn({1, 64, 28, 28}, rng),
                            randn({1, 128, 14, 14}, rng), randn({1, 256, 7, 7}, rng)};
  Tensor logits;
  {
    NoGradGuard guard;
    logits = cls_head_forward(feats, cfg, w);
  }
  CHECK(logits.shape() == Shape{1, 1000});

  HeadConfig tiny{{2, 4, 8, 16}, {8, 16, 32, 64}, 32, 4};
  auto wt = make_head(tiny, rng);
  fill(wt.classifier.weight, 0.0);
  for (int i = 0; i < 4; ++i) wt.classifier.bias.mutable_data()[i] = 0.25 * i;
  std::vector<Tensor> small{randn({1, 2, 8, 8}, rng), randn({1, 4, 4, 4}, rng),
                            randn({1, 8, 2, 2}, rng), randn({1, 16, 1, 1}, rng)};
  CHECK(values(cls_head_forward(small, tiny, wt)) == std::vector<double>{0, 0.25, 0.5, 0.75});
  CHECK_THROWS_AS(cls_head_forward({small[0]}, tiny, wt), ConfigError);
}

TEST_CASE("every block passes the gradient check") {
  SplitMix64 rng(13);
  for (const auto& r : block_grad_checks(rng)) {
    INFO(r.op_name << " err=" << r.max_rel_error << " " << r.detail);
    CHECK(r.passed);
  }
}
