#include "hrvit/oracles.hpp"

#include <cmath>
#include <limits>

namespace hrvit::oracle {

namespace {

using Real = long double;

struct Map4 {
  std::int64_t n, c, h, w;
  std::int64_t operator()(std::int64_t a, std::int64_t b, std::int64_t y, std::int64_t x) const {
    return ((a * c + b) * h + y) * w + x;
  }
};

Map4 map_of(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

Tensor elementwise(const Tensor& x, double (*f)(double)) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = f(v);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("oracle matmul: " + to_string(a.shape()) + " × " + to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::int64_t t = 0; t < k; ++t) s += Real(a.data()[i * k + t]) * b.data()[t * n + j];
      out[i * n + j] = static_cast<double>(s);
    }
  }
  return Tensor({m, n}, std::move(out));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              int groups) {
  const auto X = map_of(x), K = map_of(w);
  const auto cout = K.n, cin_g = K.c, kh = K.h, kw = K.w;
  const auto cout_g = cout / groups;
  const auto ho = (X.h + 2 * padding - kh) / stride + 1;
  const auto wo = (X.w + 2 * padding - kw) / stride + 1;
  const Map4 Y{X.n, cout, ho, wo};
  std::vector<double> out(X.n * cout * ho * wo);
  for (std::int64_t n = 0; n < X.n; ++n)
    for (std::int64_t co = 0; co < cout; ++co) {
      const auto g = co / cout_g;
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          Real s = bias.defined() ? bias.data()[co] : 0.0;
          for (std::int64_t ci = 0; ci < cin_g; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto iy = oy * stride - padding + ky;
                const auto ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= X.h || ix < 0 || ix >= X.w) continue;
                s += Real(x.data()[X(n, g * cin_g + ci, iy, ix)]) * w.data()[K(co, ci, ky, kx)];
              }
          out[Y(n, co, oy, ox)] = static_cast<double>(s);
        }
    }
  return Tensor({X.n, cout, ho, wo}, std::move(out));
}

std::vector<double> softmax(const std::vector<double>& row) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (double v : row) mx = std::max<Real>(mx, v);
  Real total = 0;
  std::vector<Real> e(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    e[i] = std::isinf(row[i]) && row[i] < 0 ? 0.0L : std::exp(Real(row[i]) - mx);
    total += e[i];
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(e[i] / total);
  return out;
}

double gelu(double x) {
  const Real xr = x;
  return static_cast<double>(xr * 0.5L * std::erfc(-xr / std::sqrt(2.0L)));
}

double hardswish(double x) {
  const double r = std::min(std::max(x + 3.0, 0.0), 6.0);
  return x * r / 6.0;
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto X = map_of(x);
  std::vector<double> out(x.numel());
  for (std::int64_t n = 0; n < X.n; ++n)
    for (std::int64_t y = 0; y < X.h; ++y)
      for (std::int64_t xx = 0; xx < X.w; ++xx) {
        Real mean = 0, var = 0;
        for (std::int64_t c = 0; c < X.c; ++c) mean += x.data()[X(n, c, y, xx)];
        mean /= X.c;
        for (std::int64_t c = 0; c < X.c; ++c) {
          const Real d = x.data()[X(n, c, y, xx)] - mean;
          var += d * d;
        }
        var /= X.c;
        const Real inv = 1.0L / std::sqrt(var + eps);
        for (std::int64_t c = 0; c < X.c; ++c) {
          const auto i = X(n, c, y, xx);
          out[i] = static_cast<double>((x.data()[i] - mean) * inv * gamma.data()[c] + beta.data()[c]);
        }
      }
  return Tensor(x.shape(), std::move(out));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                  const Tensor& var, double eps) {
  const auto X = map_of(x);
  std::vector<double> out(x.numel());
  for (std::int64_t n = 0; n < X.n; ++n)
    for (std::int64_t c = 0; c < X.c; ++c)
      for (std::int64_t y = 0; y < X.h; ++y)
        for (std::int64_t xx = 0; xx < X.w; ++xx) {
          const auto i = X(n, c, y, xx);
          out[i] = (x.data()[i] - mean.data()[c]) / std::sqrt(var.data()[c] + eps) *
                       gamma.data()[c] +
                   beta.data()[c];
        }
  return Tensor(x.shape(), std::move(out));
}

Tensor windowed_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t head_dim,
                     const std::vector<std::uint8_t>& pad_mask) {
  const auto Q = map_of(q);
  const auto len = Q.h * Q.w;
  const auto heads = Q.c / head_dim;
  const Real inv_scale = 1.0L / std::sqrt(Real(head_dim));
  std::vector<double> out(q.numel(), 0.0);
  for (std::int64_t b = 0; b < Q.n; ++b)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t i = 0; i < len; ++i) {
        if (pad_mask[b * len + i]) continue;
        std::vector<double> logits(len);
        for (std::int64_t j = 0; j < len; ++j) {
          if (pad_mask[b * len + j]) {
            logits[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          Real dot = 0;
          for (std::int64_t d = 0; d < head_dim; ++d) {
            const auto c = h * head_dim + d;
            dot += Real(q.data()[Q(b, c, i / Q.w, i % Q.w)]) * k.data()[Q(b, c, j / Q.w, j % Q.w)];
          }
          logits[j] = static_cast<double>(dot * inv_scale);
        }
        const auto p = softmax(logits);
        for (std::int64_t d = 0; d < head_dim; ++d) {
          const auto c = h * head_dim + d;
          Real acc = 0;
          for (std::int64_t j = 0; j < len; ++j) acc += p[j] * Real(v.data()[Q(b, c, j / Q.w, j % Q.w)]);
          out[Q(b, c, i / Q.w, i % Q.w)] = static_cast<double>(acc);
        }
      }
  return Tensor(q.shape(), std::move(out));
}

Tensor cross_window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              std::int64_t head_dim, int window) {
  const auto X = map_of(q);
  const auto half = X.c / 2;
  const Real inv_scale = 1.0L / std::sqrt(Real(head_dim));
  std::vector<double> out(q.numel(), 0.0);
  for (std::int64_t n = 0; n < X.n; ++n)
    for (std::int64_t c0 = 0; c0 < X.c; c0 += head_dim) {
      const bool horizontal = c0 < half;
      for (std::int64_t y = 0; y < X.h; ++y)
        for (std::int64_t x = 0; x < X.w; ++x) {
          // Keys: every valid position in the same strip.
          std::vector<std::pair<std::int64_t, std::int64_t>> keys;
          for (std::int64_t ky = 0; ky < X.h; ++ky)
            for (std::int64_t kx = 0; kx < X.w; ++kx) {
              const bool same = horizontal ? ky / window == y / window : kx / window == x / window;
              if (same) keys.emplace_back(ky, kx);
            }
          std::vector<double> logits;
          for (auto [ky, kx] : keys) {
            Real dot = 0;
            for (std::int64_t d = 0; d < head_dim; ++d)
              dot += Real(q.data()[X(n, c0 + d, y, x)]) * k.data()[X(n, c0 + d, ky, kx)];
            logits.push_back(static_cast<double>(dot * inv_scale));
          }
          const auto p = softmax(logits);
          for (std::int64_t d = 0; d < head_dim; ++d) {
            Real acc = 0;
            for (std::size_t j = 0; j < keys.size(); ++j)
              acc += p[j] * Real(v.data()[X(n, c0 + d, keys[j].first, keys[j].second)]);
            out[X(n, c0 + d, y, x)] = static_cast<double>(acc);
          }
        }
    }
  return Tensor(q.shape(), std::move(out));
}

Tensor des(const Tensor& x, const Tensor& a, const Tensor& b) {
  const auto X = map_of(x);
  const auto p = a.dim(0), q = b.dim(0), c = p * q;
  // Dense Kronecker factors: left = A ⊗ I_q, right = I_p ⊗ B.
  std::vector<double> left(c * c, 0.0), right(c * c, 0.0);
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t j = 0; j < p; ++j)
      for (std::int64_t r = 0; r < q; ++r) left[(i * q + r) * c + j * q + r] = a.data()[i * p + j];
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t r = 0; r < q; ++r)
      for (std::int64_t s = 0; s < q; ++s) right[(i * q + r) * c + i * q + s] = b.data()[r * q + s];
  std::vector<double> out(x.numel());
  std::vector<double> vec(c), mid(c);
  for (std::int64_t n = 0; n < X.n; ++n)
    for (std::int64_t y = 0; y < X.h; ++y)
      for (std::int64_t xx = 0; xx < X.w; ++xx) {
        for (std::int64_t ch = 0; ch < c; ++ch) vec[ch] = x.data()[X(n, ch, y, xx)];
        for (std::int64_t r = 0; r < c; ++r) {
          Real s = 0;
          for (std::int64_t t = 0; t < c; ++t) s += Real(right[r * c + t]) * vec[t];
          mid[r] = hardswish(static_cast<double>(s));
        }
        for (std::int64_t r = 0; r < c; ++r) {
          Real s = 0;
          for (std::int64_t t = 0; t < c; ++t) s += Real(left[r * c + t]) * mid[t];
          out[X(n, r, y, xx)] = static_cast<double>(s);
        }
      }
  return Tensor(x.shape(), std::move(out));
}

namespace {

Tensor sum_maps(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor conv_of(const Conv& c, const Tensor& x) {
  return oracle::conv2d(x, c.weight, c.bias, c.stride, c.padding, c.groups);
}

}  // namespace

Tensor attn_block(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w) {
  const Tensor normed = layer_norm_channels(x, w.norm.gamma, w.norm.beta, w.norm.eps);
  const Tensor q = conv_of(w.query, normed);
  const Tensor v = conv_of(w.value, normed);
  const Tensor k = cfg.share_kv ? v : conv_of(w.key, normed);
  Tensor y = cross_window_attention(q, k, v, cfg.head_dim, cfg.window);
  if (cfg.use_parallel_conv) y = sum_maps(y, conv_of(w.parallel_dw, elementwise(v, hardswish)));
  Tensor o = conv_of(w.out, y);
  if (cfg.use_extra_nonlinearity_bn) {
    o = batch_norm(elementwise(o, hardswish), w.out_bn.gamma, w.out_bn.beta,
                   w.out_bn.running_mean, w.out_bn.running_var, w.out_bn.eps);
  }
  Tensor result = sum_maps(x, o);
  if (cfg.use_des) result = sum_maps(result, des(x, w.des->a, w.des->b));
  return result;
}

}  // namespace hrvit::oracle
