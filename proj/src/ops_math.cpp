#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hrvit/ops.hpp"
#include "ops_detail.hpp"

namespace hrvit {

using detail::wants_grad;

bool Mask::any() const {
  return std::any_of(bits.begin(), bits.end(), [](auto b) { return b != 0; });
}

std::int64_t Mask::count() const {
  return std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; });
}

namespace {

// Broadcast layout: output shape plus per-operand strides (0 on broadcast axes).
struct Broadcast {
  Shape out;
  Shape stride_a;
  Shape stride_b;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b) {
  const auto r = std::max(a.size(), b.size());
  Broadcast bc{Shape(r), Shape(r, 0), Shape(r, 0)};
  const auto sa = detail::contiguous_strides(a);
  const auto sb = detail::contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const auto ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const auto ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    const std::int64_t ea = ia >= 0 ? a[ia] : 1;
    const std::int64_t eb = ib >= 0 ? b[ib] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcastable");
    }
    bc.out[i] = std::max(ea, eb);
    if (ia >= 0 && ea != 1) bc.stride_a[i] = sa[ia];
    if (ib >= 0 && eb != 1) bc.stride_b[i] = sb[ib];
  }
  return bc;
}

// Calls fn(out_index, a_offset, b_offset) over the broadcast output.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const int r = static_cast<int>(bc.out.size());
  const std::int64_t total = numel(bc.out);
  if (total == 0) return;
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  const auto inner = bc.out[r - 1];
  const auto ia = bc.stride_a[r - 1], ib = bc.stride_b[r - 1];
  for (std::int64_t o = 0; o < total; o += inner) {
    for (std::int64_t k = 0; k < inner; ++k) fn(o + k, oa + k * ia, ob + k * ib);
    for (int d = r - 2; d >= 0; --d) {
      if (++idx[d] < bc.out[d]) {
        oa += bc.stride_a[d];
        ob += bc.stride_b[d];
        break;
      }
      oa -= bc.stride_a[d] * (bc.out[d] - 1);
      ob -= bc.stride_b[d] * (bc.out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (a.shape() == b.shape()) {
    const auto n = a.numel();
    std::vector<double> v(n);
    switch (kind) {
      case BinaryKind::kAdd: for (std::int64_t i = 0; i < n; ++i) v[i] = pa[i] + pb[i]; break;
      case BinaryKind::kSub: for (std::int64_t i = 0; i < n; ++i) v[i] = pa[i] - pb[i]; break;
      case BinaryKind::kMul: for (std::int64_t i = 0; i < n; ++i) v[i] = pa[i] * pb[i]; break;
    }
    count_elementwise(n);
    return make_op_result(a.shape(), std::move(v), {a, b}, [kind](Tensor::Node& self) {
      const auto n = self.grad.size();
      const auto& g = self.grad;
      if (wants_grad(self, 0)) {
        auto& ga = self.inputs[0]->grad_buffer();
        if (kind == BinaryKind::kMul) {
          const auto& vb = self.inputs[1]->data;
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (wants_grad(self, 1)) {
        auto& gb = self.inputs[1]->grad_buffer();
        if (kind == BinaryKind::kMul) {
          const auto& va = self.inputs[0]->data;
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
        } else if (kind == BinaryKind::kSub) {
          for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      }
    });
  }
  auto bc = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> v(numel(bc.out));
  for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    switch (kind) {
      case BinaryKind::kAdd: v[o] = pa[ia] + pb[ib]; break;
      case BinaryKind::kSub: v[o] = pa[ia] - pb[ib]; break;
      case BinaryKind::kMul: v[o] = pa[ia] * pb[ib]; break;
    }
  });
  count_elementwise(static_cast<std::int64_t>(v.size()));
  return make_op_result(bc.out, std::move(v), {a, b}, [bc, kind](Tensor::Node& self) {
    const bool need_a = wants_grad(self, 0), need_b = wants_grad(self, 1);
    const auto& va = self.inputs[0]->data;
    const auto& vb = self.inputs[1]->data;
    double* ga = need_a ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gb = need_b ? self.inputs[1]->grad_buffer().data() : nullptr;
    const auto& g = self.grad;
    for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::kSub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::kMul:
          if (ga) ga[ia] += g[o] * vb[ib];
          if (gb) gb[ib] += g[o] * va[ia];
          break;
      }
    });
  });
}

// Elementwise unary op with derivative evaluated from the input value.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  const auto n = x.numel();
  std::vector<double> v(n);
  const double* px = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) v[i] = f(px[i]);
  count_elementwise(n);
  return make_op_result(x.shape(), std::move(v), {x}, [df](Tensor::Node& self) {
    const auto& in = self.inputs[0]->data;
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(in[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double) { return factor; });
}

Tensor masked_fill(const Tensor& x, const Mask& mask, double value) {
  if (numel(mask.shape) != static_cast<std::int64_t>(mask.bits.size())) {
    throw ShapeError("mask bits do not match mask shape " + to_string(mask.shape));
  }
  auto bc = broadcast_shapes(x.shape(), mask.shape);
  if (bc.out != x.shape()) {
    throw ShapeError("mask " + to_string(mask.shape) + " does not broadcast onto " +
                     to_string(x.shape()));
  }
  std::vector<double> v(x.data().begin(), x.data().end());
  std::vector<std::uint8_t> hit(v.size(), 0);
  for_each_broadcast(bc, [&](std::int64_t o, std::int64_t, std::int64_t im) {
    if (mask.bits[im]) {
      v[o] = value;
      hit[o] = 1;
    }
  });
  count_elementwise(x.numel());
  return make_op_result(x.shape(), std::move(v), {x}, [hit](Tensor::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!hit[i]) gx[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op_result(Shape{}, {s}, {x}, [](Tensor::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor sum_squares(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return make_op_result(Shape{}, {s}, {x}, [](Tensor::Node& self) {
    const auto& in = self.inputs[0]->data;
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * in[i] * self.grad[0];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects N×C×H×W, got " + to_string(x.shape()));
  const auto& s = x.shape();
  const auto planes = s[0] * s[1], area = s[2] * s[3];
  std::vector<double> v(planes);
  const double* px = x.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::int64_t k = 0; k < area; ++k) acc += px[p * area + k];
    v[p] = acc / static_cast<double>(area);
  }
  count_elementwise(x.numel());
  return make_op_result({s[0], s[1]}, std::move(v), {x}, [planes, area](Tensor::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p) {
      const double g = self.grad[p] / static_cast<double>(area);
      for (std::int64_t k = 0; k < area; ++k) gx[p * area + k] += g;
    }
  });
}

Tensor hardswish(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 3.0) return v;
        if (v <= -3.0) return 0.0;
        return v * (v + 3.0) / 6.0;
      },
      [](double v) {
        if (v < -3.0 || v == 3.0 || v == -3.0) return 0.0;
        if (v > 3.0) return 1.0;
        return (2.0 * v + 3.0) / 6.0;
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * std::erfc(-v * kInvSqrt2); },
      [](double v) {
        return 0.5 * std::erfc(-v * kInvSqrt2) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank());
  const auto& s = x.shape();
  const auto outer = detail::extent_product(s, 0, a);
  const auto n = s[a];
  const auto inner = detail::extent_product(s, a + 1, x.rank());
  std::vector<double> v(x.numel());
  const double* px = x.data().data();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      double m = kNegInf;
      for (std::int64_t k = 0; k < n; ++k) m = std::max(m, px[base + k * inner]);
      if (m == kNegInf) {
        throw DegenerateRowError("softmax row with every entry -inf (fully masked window)");
      }
      double z = 0.0;
      for (std::int64_t k = 0; k < n; ++k) {
        const double e = std::exp(px[base + k * inner] - m);
        v[base + k * inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::int64_t k = 0; k < n; ++k) v[base + k * inner] *= inv;
    }
  }
  count_elementwise(x.numel());
  // The backward pass needs the output, which lives in the result node itself.
  return make_op_result(s, std::move(v), {x}, [outer, n, inner](Tensor::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::int64_t k = 0; k < n; ++k) {
          const auto j = base + k * inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  int axis) {
  const int a = detail::normalize_axis(axis, x.rank());
  const auto& s = x.shape();
  const auto c = s[a];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("layer_norm affine shapes " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " do not match channel extent " +
                     std::to_string(c) + " of " + to_string(s));
  }
  const auto outer = detail::extent_product(s, 0, a);
  const auto inner = detail::extent_product(s, a + 1, x.rank());
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> v(x.numel());
  // Normalized values and per-position inverse std, kept for the backward pass.
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(outer * inner);
  std::vector<double> mean(inner), var(inner);
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::int64_t base = o * c * inner;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::int64_t k = 0; k < c; ++k) {
      const double* row = px + base + k * inner;
      for (std::int64_t i = 0; i < inner; ++i) mean[i] += row[i];
    }
    for (auto& m : mean) m /= static_cast<double>(c);
    for (std::int64_t k = 0; k < c; ++k) {
      const double* row = px + base + k * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const double d = row[i] - mean[i];
        var[i] += d * d;
      }
    }
    for (std::int64_t i = 0; i < inner; ++i) {
      inv_std[o * inner + i] = 1.0 / std::sqrt(var[i] / static_cast<double>(c) + eps);
    }
    for (std::int64_t k = 0; k < c; ++k) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const auto j = base + k * inner + i;
        xhat[j] = (px[j] - mean[i]) * inv_std[o * inner + i];
        v[j] = xhat[j] * pg[k] + pb[k];
      }
    }
  }
  count_elementwise(x.numel());
  return make_op_result(
      s, std::move(v), {x, gamma, beta},
      [outer, c, inner, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tensor::Node& self) {
        const auto& g = self.grad;
        const auto& gam = self.inputs[1]->data;
        if (wants_grad(self, 1) || wants_grad(self, 2)) {
          auto* gg = wants_grad(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
          auto* gb = wants_grad(self, 2) ? self.inputs[2]->grad_buffer().data() : nullptr;
          for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t k = 0; k < c; ++k) {
              for (std::int64_t i = 0; i < inner; ++i) {
                const auto j = (o * c + k) * inner + i;
                if (gg) gg[k] += g[j] * xhat[j];
                if (gb) gb[k] += g[j];
              }
            }
          }
        }
        if (!wants_grad(self, 0)) return;
        auto& gx = self.inputs[0]->grad_buffer();
        std::vector<double> m1(inner), m2(inner);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::int64_t o = 0; o < outer; ++o) {
          std::fill(m1.begin(), m1.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          for (std::int64_t k = 0; k < c; ++k) {
            for (std::int64_t i = 0; i < inner; ++i) {
              const auto j = (o * c + k) * inner + i;
              const double dxh = g[j] * gam[k];
              m1[i] += dxh;
              m2[i] += dxh * xhat[j];
            }
          }
          for (std::int64_t k = 0; k < c; ++k) {
            for (std::int64_t i = 0; i < inner; ++i) {
              const auto j = (o * c + k) * inner + i;
              const double dxh = g[j] * gam[k];
              gx[j] += inv_std[o * inner + i] * (dxh - m1[i] * inv_c - xhat[j] * m2[i] * inv_c);
            }
          }
        }
      });
}

Tensor batch_norm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const Tensor& running_mean, const Tensor& running_var,
                            double eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm expects N×C×..., got " + to_string(x.shape()));
  const auto& s = x.shape();
  const auto c = s[1];
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->shape() != Shape{c}) {
      throw ShapeError("batch_norm parameter shape " + to_string(t->shape()) +
                       " does not match channels of " + to_string(s));
    }
  }
  std::vector<double> mult(c), shift(c);
  for (std::int64_t k = 0; k < c; ++k) {
    const double var = running_var.data()[k];
    if (var < 0.0) throw ConfigError("batch_norm running_var is negative");
    if (var + eps <= 0.0) throw ConfigError("batch_norm running_var + eps must be positive");
    mult[k] = 1.0 / std::sqrt(var + eps);
    shift[k] = running_mean.data()[k];
  }
  const auto outer = s[0];
  const auto inner = detail::extent_product(s, 2, x.rank());
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> v(x.numel());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < c; ++k) {
      const auto base = (o * c + k) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        v[base + i] = (px[base + i] - shift[k]) * mult[k] * pg[k] + pb[k];
      }
    }
  }
  count_elementwise(x.numel());
  return make_op_result(s, std::move(v), {x, gamma, beta},
                        [outer, c, inner, mult, shift](Tensor::Node& self) {
                          const auto& g = self.grad;
                          const auto& in = self.inputs[0]->data;
                          const auto& gam = self.inputs[1]->data;
                          auto* gx = wants_grad(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
                          auto* gg = wants_grad(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
                          auto* gb = wants_grad(self, 2) ? self.inputs[2]->grad_buffer().data() : nullptr;
                          for (std::int64_t o = 0; o < outer; ++o) {
                            for (std::int64_t k = 0; k < c; ++k) {
                              const auto base = (o * c + k) * inner;
                              for (std::int64_t i = 0; i < inner; ++i) {
                                const auto j = base + i;
                                const double xh = (in[j] - shift[k]) * mult[k];
                                if (gx) gx[j] += g[j] * mult[k] * gam[k];
                                if (gg) gg[k] += g[j] * xh;
                                if (gb) gb[k] += g[j];
                              }
                            }
                          }
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
  }
  const auto m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Broadcast bc;
  try {
    bc = broadcast_shapes(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch dimensions not broadcastable: " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  }
  const auto batches = numel(bc.out);
  // Offsets in units of whole matrices.
  std::vector<std::int64_t> off_a(batches), off_b(batches);
  for_each_broadcast(bc, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    off_a[o] = ia;
    off_b[o] = ib;
  });
  Shape out_shape = bc.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> v(batches * m * n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const bool shared_b = numel(batch_b) == 1 && numel(batch_a) == batches;
  if (shared_b) {
    // Fold the batch into the row dimension: one large GEMM.
    detail::MapMat(v.data(), batches * m, n).noalias() =
        detail::ConstMapMat(pa, batches * m, k) * detail::ConstMapMat(pb, k, n);
  } else {
    for (std::int64_t t = 0; t < batches; ++t) {
      detail::MapMat(v.data() + t * m * n, m, n).noalias() =
          detail::ConstMapMat(pa + off_a[t] * m * k, m, k) *
          detail::ConstMapMat(pb + off_b[t] * k * n, k, n);
    }
  }
  count_macs(batches * m * n * k);
  return make_op_result(
      out_shape, std::move(v), {a, b},
      [m, k, n, batches, shared_b, off_a = std::move(off_a),
       off_b = std::move(off_b)](Tensor::Node& self) {
        const double* g = self.grad.data();
        const double* pa = self.inputs[0]->data.data();
        const double* pb = self.inputs[1]->data.data();
        const bool need_a = wants_grad(self, 0), need_b = wants_grad(self, 1);
        double* ga = need_a ? self.inputs[0]->grad_buffer().data() : nullptr;
        double* gb = need_b ? self.inputs[1]->grad_buffer().data() : nullptr;
        if (shared_b) {
          detail::ConstMapMat G(g, batches * m, n);
          if (ga) detail::MapMat(ga, batches * m, k).noalias() += G * detail::ConstMapMat(pb, k, n).transpose();
          if (gb) detail::MapMat(gb, k, n).noalias() += detail::ConstMapMat(pa, batches * m, k).transpose() * G;
          return;
        }
        for (std::int64_t t = 0; t < batches; ++t) {
          detail::ConstMapMat G(g + t * m * n, m, n);
          if (ga) {
            detail::MapMat(ga + off_a[t] * m * k, m, k).noalias() +=
                G * detail::ConstMapMat(pb + off_b[t] * k * n, k, n).transpose();
          }
          if (gb) {
            detail::MapMat(gb + off_b[t] * k * n, k, n).noalias() +=
                detail::ConstMapMat(pa + off_a[t] * m * k, m, k).transpose() * G;
          }
        }
      });
}

}  // namespace hrvit
