#include <doctest.h>

#include <cmath>
#include <limits>

#include "hrvit/grad_check.hpp"
#include "hrvit/ops.hpp"
#include "hrvit/oracles.hpp"
#include "hrvit/random.hpp"
#include "hrvit/checks.hpp"

using namespace hrvit;

TEST_CASE("matmul small products") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1.5, -2, 3, 4});
  CHECK(values(matmul(eye, m)) == values(m));
  CHECK(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  SplitMix64 rng(11);
  for (int t = 0; t < 5; ++t) {
    Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
    CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("batched matmul broadcasts a shared right operand") {
  SplitMix64 rng(12);
  Tensor a = randn({3, 2, 4}, rng), b = randn({4, 5}, rng);
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2, 5});
  for (int i = 0; i < 3; ++i) {
    CHECK(max_abs_diff(reshape(slice(c, 0, i, 1), {2, 5}),
                       oracle::matmul(reshape(slice(a, 0, i, 1), {2, 4}), b)) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,2)") != std::string::npos);
  }
}

TEST_CASE("conv2d identity and depth-wise hand values") {
  SplitMix64 rng(1);
  Tensor x = randn({1, 3, 4, 4}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(values(conv2d(x, Tensor({3, 3, 1, 1}, eye))) == values(x));

  Tensor ones = Tensor::full({1, 1, 5, 5}, 1.0);
  Tensor y = conv2d(ones, Tensor::full({1, 1, 3, 3}, 1.0), {}, 1, 1, 1);
  CHECK(y.at({0, 0, 2, 2}) == 9.0);
  CHECK(y.at({0, 0, 0, 0}) == 4.0);
  CHECK(y.at({0, 0, 4, 4}) == 4.0);
}

TEST_CASE("conv2d matches the nested-loop oracle across stride/padding/groups") {
  SplitMix64 rng(2);
  struct Case { std::int64_t cin, cout, k; int stride, pad, groups; };
  for (auto c : {Case{4, 8, 3, 2, 1, 1}, Case{4, 4, 3, 1, 1, 4}, Case{6, 4, 1, 1, 0, 2},
                 Case{4, 4, 5, 4, 2, 4}, Case{3, 5, 3, 1, 0, 1}}) {
    Tensor x = randn({2, c.cin, 6, 6}, rng);
    Tensor w = randn({c.cout, c.cin / c.groups, c.k, c.k}, rng);
    Tensor b = randn({c.cout}, rng);
    CHECK(max_abs_diff(conv2d(x, w, b, c.stride, c.pad, c.groups),
                       oracle::conv2d(x, w, b, c.stride, c.pad, c.groups)) < 1e-10);
  }
}

TEST_CASE("conv2d rejects bad groups and empty outputs") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({4, 1, 1, 1}), {}, 1, 0, 2),
                  ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
}

TEST_CASE("softmax values and masking") {
  auto s = softmax(Tensor({3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const double inf = std::numeric_limits<double>::infinity();
  auto m = softmax(Tensor({2}, {0, -inf}));
  CHECK(m.data()[0] == 1.0);
  CHECK(m.data()[1] == 0.0);
  auto r = softmax(Tensor({3}, {1, 2, 3}));
  auto ref = oracle::softmax({1, 2, 3});
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r.data()[i] - ref[i]) < 1e-15);
  CHECK_THROWS_AS(softmax(Tensor({2}, {-inf, -inf})), DegenerateRowError);
}

TEST_CASE("softmax rows sum to one") {
  SplitMix64 rng(3);
  Tensor x = randn({7, 9}, rng, 10.0);
  auto y = softmax(x, -1);
  for (int r = 0; r < 7; ++r) {
    double s = 0;
    for (int c = 0; c < 9; ++c) s += y.data()[r * 9 + c];
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer norm statistics") {
  Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  auto c = layer_norm(Tensor::full({2, 4}, 3.0), g, b, 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);
  auto k = layer_norm(Tensor({1, 4}, {1, 2, 3, 4}), Tensor::zeros({4}), Tensor::full({4}, 0.5), 1e-5);
  for (double v : k.data()) CHECK(v == 0.5);

  SplitMix64 rng(4);
  Tensor gg = Tensor::full({8}, 1.0), bb = Tensor::zeros({8});
  auto y = layer_norm(randn({2, 8}, rng, 3.0), gg, bb, 0.0);
  for (int r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 8; ++c) mean += y.data()[r * 8 + c];
    mean /= 8;
    for (int c = 0; c < 8; ++c) var += std::pow(y.data()[r * 8 + c] - mean, 2);
    var /= 8;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer norm over channels matches oracle") {
  SplitMix64 rng(5);
  Tensor x = randn({2, 6, 3, 4}, rng), g = randn({6}, rng), b = randn({6}, rng);
  CHECK(max_abs_diff(layer_norm(x, g, b, 1e-5, 1), oracle::layer_norm_channels(x, g, b, 1e-5)) <
        1e-12);
}

TEST_CASE("batch norm inference") {
  Tensor x = Tensor({1, 1, 1, 1}, {3.0});
  Tensor one = Tensor::full({1}, 1.0), zero = Tensor::zeros({1});
  CHECK(batch_norm_inference(x, one, zero, zero, one, 0.0).item() == 3.0);
  CHECK(batch_norm_inference(x, Tensor::full({1}, 2.0), one, zero, one, 0.0).item() == 7.0);
  SplitMix64 rng(6);
  Tensor xx = randn({2, 3, 2, 2}, rng);
  Tensor g = randn({3}, rng), b = randn({3}, rng), m = randn({3}, rng);
  Tensor v = rand_uniform({3}, rng, 0.5, 2.0);
  CHECK(max_abs_diff(batch_norm_inference(xx, g, b, m, v, 1e-5),
                     oracle::batch_norm(xx, g, b, m, v, 1e-5)) < 1e-13);
  CHECK_THROWS_AS(batch_norm_inference(xx, g, b, m, Tensor({3}, {1, -1, 1}), 1e-5), ConfigError);
}

TEST_CASE("activations") {
  CHECK(hardswish(Tensor::scalar(0)).item() == 0.0);
  CHECK(hardswish(Tensor::scalar(4)).item() == 4.0);
  CHECK(hardswish(Tensor::scalar(-4)).item() == 0.0);
  CHECK(hardswish(Tensor::scalar(1)).item() == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(relu(Tensor::scalar(-1)).item() == 0.0);
  CHECK(relu(Tensor::scalar(2)).item() == 2.0);
  CHECK(gelu(Tensor::scalar(0)).item() == 0.0);
  for (double x : {1.0, -2.5, 0.3, 6.0}) {
    CHECK(std::abs(gelu(Tensor::scalar(x)).item() - oracle::gelu(x)) < 1e-15);
  }
}

TEST_CASE("nearest upsample layout and inverse sampling") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(values(nearest_upsample(x, 1)) == values(x));
  auto y = nearest_upsample(x, 2);
  CHECK(values(y) == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  CHECK_THROWS_AS(nearest_upsample(x, 0), ConfigError);

  SplitMix64 rng(7);
  Tensor r = randn({1, 2, 3, 5}, rng);
  CHECK(values(conv2d(nearest_upsample(r, 4), Tensor({2, 1, 1, 1}, {1, 1}), {}, 4, 0, 2)) ==
        values(r));
}

TEST_CASE("pad and crop are inverse") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(values(pad_zeros(x, 0, 0)) == values(x));
  auto p = pad_zeros(x, 1, 0);
  CHECK(p.shape() == Shape{1, 1, 3, 2});
  CHECK(values(p) == std::vector<double>{1, 2, 3, 4, 0, 0});
  SplitMix64 rng(8);
  Tensor r = randn({2, 3, 4, 5}, rng);
  CHECK(values(crop(pad_zeros(r, 3, 2), 4, 5)) == values(r));
}

TEST_CASE("gradient checker on closed forms") {
  SplitMix64 rng(9);
  Tensor x = randn({3, 4}, rng);
  auto id = grad_check("identity", [](const Tensor& t) { return scale(t, 1.0); }, x, 1e-5, 1e-7);
  CHECK(id.passed);
  CHECK(id.max_rel_error <= 1e-7);
  Tensor far = randn_away_from({4, 5}, rng, 3.0, {-3.0, 3.0});
  auto hs = grad_check("hardswish", [](const Tensor& t) { return hardswish(t); }, far, 1e-5, 1e-6);
  CHECK(hs.passed);
}

TEST_CASE("every differentiable op passes the gradient check") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    SplitMix64 rng(seed);
    for (const auto& r : op_grad_checks(rng)) {
      INFO(r.op_name << ": " << r.detail);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("determinism across runs") {
  auto run = [] {
    SplitMix64 rng(42);
    Tensor x = randn({1, 4, 6, 6}, rng), w = randn({8, 4, 3, 3}, rng);
    return values(gelu(conv2d(x, w, {}, 2, 1)));
  };
  CHECK(run() == run());
}
