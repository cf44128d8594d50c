#pragma once

#include <cstdint>
#include <optional>

#include "hrvit/des.hpp"
#include "hrvit/layers.hpp"

namespace hrvit {

/// Configuration of one augmented cross-shaped attention block.
struct AttnConfig {
  std::int64_t channels = 0;
  int window = 1;
  std::int64_t head_dim = 0;
  bool share_kv = true;
  bool use_parallel_conv = true;
  bool use_des = true;
  bool use_extra_nonlinearity_bn = true;
  /// Run the masking code path even when no padding is needed.
  bool force_mask = false;

  std::int64_t num_heads() const { return head_dim > 0 ? channels / head_dim : 0; }
  /// Throws ConfigError unless C % d_k == 0, K is even and positive, s >= 1.
  void validate() const;
};

struct AttnWeights {
  LayerNorm norm;
  Conv query;   // C×C point-wise; rows [k·d_k, (k+1)·d_k) form head k
  Conv key;     // undefined when keys share the value projection
  Conv value;
  Conv out;
  Conv parallel_dw;   // 3×3 depth-wise on hardswish(value); undefined when disabled
  BatchNorm out_bn;   // identity-initialized; undefined when disabled
  std::optional<DESWeights> des;
};

AttnWeights make_attn(const AttnConfig& cfg, SplitMix64& rng);
ParamList attn_parameters(const AttnWeights& w);

enum class Orientation { kHorizontal, kVertical };

/// How a feature map was cut into windows.
struct WindowLayout {
  std::int64_t batch = 0;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  int window = 1;
  Orientation orientation = Orientation::kHorizontal;
  std::int64_t count = 0;  // M windows per image
  std::int64_t padded_height = 0;
  std::int64_t padded_width = 0;

  std::int64_t window_height() const {
    return orientation == Orientation::kHorizontal ? window : padded_height;
  }
  std::int64_t window_width() const {
    return orientation == Orientation::kHorizontal ? padded_width : window;
  }
  std::int64_t positions() const { return window_height() * window_width(); }
};

struct Windows {
  Tensor tensor;    // (N·M)×C×s×W or (N·M)×C×H×s, index n·M + m
  Mask pad_mask;    // (N·M)×L, set where the position is zero padding
  WindowLayout layout;
};

/// Zero-pads the partitioned axis to a multiple of s and cuts s-row
/// (horizontal) or s-column (vertical) strips.
Windows window_partition(const Tensor& x, int window, Orientation orientation);

/// Reassembles windows into the padded N×C×H'×W' map; crop to recover the input.
Tensor window_merge(const Tensor& windows, const WindowLayout& layout);

/// Scaled dot-product attention inside each window on already-projected
/// query/key/value windows of shape B×(heads·d_k)×wh×ww. Keys at padded
/// positions get -inf logits; padded query rows are zeroed.
Tensor windowed_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t head_dim,
                     const Mask& pad_mask, bool force_mask = false);

/// Same, projecting a raw window batch with point-wise query/key/value convs.
Tensor windowed_mhsa(const Tensor& windows, const Conv& wq, const Conv& wk, const Conv& wv,
                     std::int64_t head_dim, const Mask& pad_mask);

/// Intermediate tensors of one block evaluation, for tests and tracing.
struct AttnTrace {
  Tensor attention;  // z: concatenated H-/V-window head outputs
  Tensor mixed;      // y = z + parallel path
  Tensor pre_bn;
  Tensor post_bn;
  Tensor shortcut;   // DES(x), undefined when disabled
};

/// Full block: x + Attn(LN(x)) + DES(x).
Tensor hrvit_attn_forward(const Tensor& x, const AttnConfig& cfg, const AttnWeights& w,
                          AttnTrace* trace = nullptr);

}  // namespace hrvit
