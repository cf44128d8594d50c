#include "hrvit/attention.hpp"

#include <cmath>
#include <limits>

namespace hrvit {

void AttnConfig::validate() const {
  if (channels < 1 || head_dim < 1 || channels % head_dim != 0) {
    throw ConfigError("attention channels " + std::to_string(channels) +
                      " not divisible by head dim " + std::to_string(head_dim));
  }
  if (num_heads() % 2 != 0) {
    throw ConfigError("attention needs an even head count (half horizontal, half vertical), got " +
                      std::to_string(num_heads()));
  }
  if (window < 1) throw ConfigError("attention window must be >= 1");
}

AttnWeights make_attn(const AttnConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  const auto c = cfg.channels;
  AttnWeights w;
  w.norm = make_layer_norm(c);
  w.query = make_pointwise(c, c, rng);
  if (!cfg.share_kv) w.key = make_pointwise(c, c, rng);
  w.value = make_pointwise(c, c, rng);
  w.out = make_pointwise(c, c, rng);
  if (cfg.use_parallel_conv) w.parallel_dw = make_depthwise(c, 3, rng);
  // eps 0 keeps the identity initialization exact.
  if (cfg.use_extra_nonlinearity_bn) w.out_bn = make_batch_norm(c, 0.0);
  if (cfg.use_des) w.des = make_des(c, rng);
  return w;
}

ParamList attn_parameters(const AttnWeights& w) {
  ParamList p;
  append_params(p, "norm", w.norm);
  append_params(p, "query", w.query);
  append_params(p, "key", w.key);
  append_params(p, "value", w.value);
  append_params(p, "out", w.out);
  append_params(p, "parallel_dw", w.parallel_dw);
  append_params(p, "out_bn", w.out_bn);
  if (w.des) append_params(p, "des", *w.des);
  return p;
}

Windows window_partition(const Tensor& x, int window, Orientation orientation) {
  if (window < 1) throw ConfigError("window size must be >= 1");
  if (x.rank() != 4) throw ShapeError("window_partition expects N×C×H×W, got " + to_string(x.shape()));
  WindowLayout l;
  l.batch = x.dim(0);
  l.channels = x.dim(1);
  l.height = x.dim(2);
  l.width = x.dim(3);
  l.window = window;
  l.orientation = orientation;
  const bool horizontal = orientation == Orientation::kHorizontal;
  const auto extent = horizontal ? l.height : l.width;
  l.count = (extent + window - 1) / window;
  l.padded_height = horizontal ? l.count * window : l.height;
  l.padded_width = horizontal ? l.width : l.count * window;

  Tensor padded = x;
  if (l.padded_height != l.height || l.padded_width != l.width) {
    padded = pad_zeros(x, l.padded_height - l.height, l.padded_width - l.width);
  }
  const auto n = l.batch, c = l.channels, m = l.count, s = static_cast<std::int64_t>(window);
  Windows out;
  if (horizontal) {
    out.tensor = reshape(permute(reshape(padded, {n, c, m, s, l.width}), {0, 2, 1, 3, 4}),
                         {n * m, c, s, l.width});
  } else {
    out.tensor = reshape(permute(reshape(padded, {n, c, l.height, m, s}), {0, 3, 1, 2, 4}),
                         {n * m, c, l.height, s});
  }
  const auto positions = l.positions();
  const auto ww = l.window_width();
  out.pad_mask.shape = {n * m, positions};
  out.pad_mask.bits.assign(n * m * positions, 0);
  for (std::int64_t b = 0; b < n * m; ++b) {
    const auto mi = b % m;
    for (std::int64_t p = 0; p < positions; ++p) {
      const auto row = p / ww, col = p % ww;
      const bool pad = horizontal ? (mi * s + row >= l.height) : (mi * s + col >= l.width);
      out.pad_mask.bits[b * positions + p] = pad ? 1 : 0;
    }
  }
  out.layout = l;
  return out;
}

Tensor window_merge(const Tensor& windows, const WindowLayout& l) {
  const auto n = l.batch, m = l.count, s = static_cast<std::int64_t>(l.window);
  const auto c = windows.numel() / (n * m * l.positions());
  if (windows.rank() != 4 || windows.dim(0) != n * m ||
      windows.dim(2) != l.window_height() || windows.dim(3) != l.window_width()) {
    throw ShapeError("window_merge: windows " + to_string(windows.shape()) +
                     " do not match the partition layout");
  }
  if (l.orientation == Orientation::kHorizontal) {
    return reshape(permute(reshape(windows, {n, m, c, s, l.padded_width}), {0, 2, 1, 3, 4}),
                   {n, c, l.padded_height, l.padded_width});
  }
  return reshape(permute(reshape(windows, {n, m, c, l.padded_height, s}), {0, 2, 3, 1, 4}),
                 {n, c, l.padded_height, l.padded_width});
}

Tensor windowed_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t head_dim,
                     const Mask& pad_mask, bool force_mask) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("windowed_mhsa: query/key/value windows differ: " + to_string(q.shape()) +
                     ", " + to_string(k.shape()) + ", " + to_string(v.shape()));
  }
  const auto b = q.dim(0), ch = q.dim(1), wh = q.dim(2), ww = q.dim(3);
  const auto len = wh * ww;
  if (head_dim < 1 || ch % head_dim != 0) {
    throw ConfigError("windowed_mhsa: " + std::to_string(ch) + " channels not divisible by head dim " +
                      std::to_string(head_dim));
  }
  if (pad_mask.shape != Shape{b, len}) {
    throw ShapeError("windowed_mhsa: pad mask " + to_string(pad_mask.shape) + " does not match " +
                     std::to_string(b) + " windows of " + std::to_string(len) + " positions");
  }
  for (std::int64_t w = 0; w < b; ++w) {
    bool all = true;
    for (std::int64_t p = 0; p < len && all; ++p) all = pad_mask.bits[w * len + p] != 0;
    if (all) throw StructuralError("window " + std::to_string(w) + " contains only padding");
  }
  const auto heads = ch / head_dim;
  Tensor qh = permute(reshape(q, {b, heads, head_dim, len}), {0, 1, 3, 2});
  Tensor kt = reshape(k, {b, heads, head_dim, len});
  Tensor vh = permute(reshape(v, {b, heads, head_dim, len}), {0, 1, 3, 2});

  Tensor logits = scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  const bool masked = force_mask || pad_mask.any();
  if (masked) {
    logits = masked_fill(logits, Mask{{b, 1, 1, len}, pad_mask.bits},
                         -std::numeric_limits<double>::infinity());
  }
  Tensor out = matmul(softmax(logits, -1), vh);
  if (masked) out = masked_fill(out, Mask{{b, 1, len, 1}, pad_mask.bits}, 0.0);
  return reshape(permute(out, {0, 1, 3, 2}), {b, ch, wh, ww});
}

Tensor windowed_mhsa(const Tensor& windows, const Conv& wq, const Conv& wk, const Conv& wv,
                     std::int64_t head_dim, const Mask& pad_mask) {
  Tensor v = apply(wv, windows);
  Tensor k = wk.defined() ? apply(wk, windows) : v;
  return windowed_mhsa(apply(wq, windows), k, v, head_dim, pad_mask);
}

namespace {

Tensor oriented_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const AttnConfig& cfg, Orientation orientation) {
  auto wq = window_partition(q, cfg.window, orientation);
  auto wk = window_partition(k, cfg.window, orientation);
  auto wv = window_partition(v, cfg.window, orientation);
  Tensor z = windowed_mhsa(wq.tensor, wk.tensor, wv.tensor, cfg.head_dim, wq.pad_mask,
                           cfg.force_mask);
  Tensor merged = window_merge(z, wq.layout);
  const auto& l = wq.layout;
  if (l.padded_height != l.height || l.padded_width != l.width) {
    merged = crop(merged, l.height, l.width);
  }
  return merged;
}

}  // namespace

Tensor hrvit_attn_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w,
                          AttnTrace* trace) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw ShapeError("attention expects N×" + std::to_string(cfg.channels) + "×H×W, got " +
                     to_string(x.shape()));
  }
  const auto half = cfg.channels / 2;
  Tensor normed = apply(w.norm, x);
  Tensor q = apply(w.query, normed);
  Tensor v = apply(w.value, normed);
  Tensor k = cfg.share_kv ? v : apply(w.key, normed);

  Tensor zh = oriented_attention(slice(q, 1, 0, half), slice(k, 1, 0, half),
                                 slice(v, 1, 0, half), cfg, Orientation::kHorizontal);
  Tensor zv = oriented_attention(slice(q, 1, half, half), slice(k, 1, half, half),
                                 slice(v, 1, half, half), cfg, Orientation::kVertical);
  Tensor z = concat({zh, zv}, 1);

  Tensor y = cfg.use_parallel_conv ? add(z, apply(w.parallel_dw, hardswish(v))) : z;
  Tensor o = apply(w.out, y);
  Tensor pre_bn = o, post_bn = o;
  if (cfg.use_extra_nonlinearity_bn) {
    pre_bn = hardswish(o);
    post_bn = apply(w.out_bn, pre_bn);
  }
  Tensor result = add(x, post_bn);
  Tensor shortcut;
  if (cfg.use_des) {
    if (!w.des) throw ConfigError("attention config enables DES but no DES weights exist");
    shortcut = des_forward(x, *w.des);
    result = add(result, shortcut);
  }
  if (trace) *trace = {z, y, pre_bn, post_bn, shortcut};
  return result;
}

}  // namespace hrvit
