#include <algorithm>
#include <numeric>

#include "hrvit/ops.hpp"
#include "ops_detail.hpp"

namespace hrvit {

namespace detail {

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(rank));
  }
  return a;
}

Shape contiguous_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

std::int64_t extent_product(const Shape& shape, int begin, int end) {
  std::int64_t n = 1;
  for (int i = begin; i < end; ++i) n *= shape[i];
  return n;
}

}  // namespace detail

using detail::wants_grad;

namespace {

// out[o] = in[perm(o)] for a permutation of axes.
void permute_copy(const double* in, const Shape& in_shape,
                  const std::vector<int>& axes, double* out) {
  const int r = static_cast<int>(in_shape.size());
  if (r == 0) {
    out[0] = in[0];
    return;
  }
  const auto in_strides = detail::contiguous_strides(in_shape);
  Shape out_shape(r), step(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_strides[axes[i]];
  }
  const std::int64_t total = numel(out_shape);
  if (total == 0) return;
  const std::int64_t inner = out_shape[r - 1];
  const std::int64_t inner_step = step[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t offset = 0;
  for (std::int64_t o = 0; o < total; o += inner) {
    const double* src = in + offset;
    double* dst = out + o;
    if (inner_step == 1) {
      std::copy(src, src + inner, dst);
    } else {
      for (std::int64_t k = 0; k < inner; ++k) dst[k] = src[k * inner_step];
    }
    for (int d = r - 2; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        offset += step[d];
        break;
      }
      offset -= step[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " +
                     to_string(shape));
  }
  std::vector<double> v(x.data().begin(), x.data().end());
  return make_op_result(std::move(shape), std::move(v), {x}, [](Tensor::Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) {
    throw ShapeError("permute axes do not match rank of " + to_string(x.shape()));
  }
  std::vector<int> seen(r, 0);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[a]++) throw ShapeError("invalid permutation");
  }
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];
  std::vector<double> v(x.numel());
  permute_copy(x.data().data(), x.shape(), axes, v.data());
  std::vector<int> inverse(r);
  for (int i = 0; i < r; ++i) inverse[axes[i]] = i;
  return make_op_result(out_shape, std::move(v), {x},
                        [out_shape, inverse](Tensor::Node& self) {
                          std::vector<double> back(self.grad.size());
                          permute_copy(self.grad.data(), out_shape, inverse, back.data());
                          auto& gx = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
                        });
}

Tensor transpose(const Tensor& x) {
  const int r = x.rank();
  if (r < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<int> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = detail::normalize_axis(axis, x.rank());
  const auto& s = x.shape();
  if (start < 0 || length < 0 || start + length > s[a]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" +
                     std::to_string(length) + ") out of range on axis " +
                     std::to_string(a) + " of " + to_string(s));
  }
  const auto outer = detail::extent_product(s, 0, a);
  const auto inner = detail::extent_product(s, a + 1, x.rank());
  const auto full = s[a];
  Shape out_shape = s;
  out_shape[a] = length;
  std::vector<double> v(numel(out_shape));
  const double* src = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * full + start) * inner, length * inner,
                v.data() + o * length * inner);
  }
  return make_op_result(out_shape, std::move(v), {x},
                        [outer, inner, full, start, length](Tensor::Node& self) {
                          auto& gx = self.inputs[0]->grad_buffer();
                          for (std::int64_t o = 0; o < outer; ++o) {
                            const double* g = self.grad.data() + o * length * inner;
                            double* d = gx.data() + (o * full + start) * inner;
                            for (std::int64_t k = 0; k < length * inner; ++k) d[k] += g[k];
                          }
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const int r = parts[0].rank();
  const int a = detail::normalize_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[a] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    bool ok = p.rank() == r;
    for (int i = 0; ok && i < r; ++i) {
      if (i != a && p.shape()[i] != parts[0].shape()[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat shape mismatch: " + to_string(parts[0].shape()) +
                       " vs " + to_string(p.shape()));
    }
    out_shape[a] += p.shape()[a];
    extents.push_back(p.shape()[a]);
  }
  const auto outer = detail::extent_product(out_shape, 0, a);
  const auto inner = detail::extent_product(out_shape, a + 1, r);
  const auto total = out_shape[a];
  std::vector<double> v(numel(out_shape));
  std::int64_t base = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * extents[p] * inner, extents[p] * inner,
                  v.data() + (o * total + base) * inner);
    }
    base += extents[p];
  }
  return make_op_result(out_shape, std::move(v), parts,
                        [outer, inner, total, extents](Tensor::Node& self) {
                          std::int64_t base = 0;
                          for (std::size_t p = 0; p < extents.size(); ++p) {
                            if (self.inputs[p]->requires_grad) {
                              auto& gx = self.inputs[p]->grad_buffer();
                              for (std::int64_t o = 0; o < outer; ++o) {
                                const double* g = self.grad.data() + (o * total + base) * inner;
                                double* d = gx.data() + o * extents[p] * inner;
                                for (std::int64_t k = 0; k < extents[p] * inner; ++k) d[k] += g[k];
                              }
                            }
                            base += extents[p];
                          }
                        });
}

namespace {

void require_nchw(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + " expects N×C×H×W, got " + to_string(x.shape()));
  }
}

// Copies the top-left min-size window of src (planes × sh × sw) into dst (planes × dh × dw).
void copy_window(const double* src, std::int64_t sh, std::int64_t sw, double* dst,
                 std::int64_t dh, std::int64_t dw, std::int64_t planes, bool accumulate) {
  const auto h = std::min(sh, dh), w = std::min(sw, dw);
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t i = 0; i < h; ++i) {
      const double* s = src + (p * sh + i) * sw;
      double* d = dst + (p * dh + i) * dw;
      if (accumulate) {
        for (std::int64_t j = 0; j < w; ++j) d[j] += s[j];
      } else {
        std::copy_n(s, w, d);
      }
    }
  }
}

}  // namespace

Tensor pad_zeros(const Tensor& x, std::int64_t bottom, std::int64_t right) {
  require_nchw(x, "pad_zeros");
  if (bottom < 0 || right < 0) throw ConfigError("pad_zeros needs nonnegative padding");
  const auto& s = x.shape();
  const auto planes = s[0] * s[1], h = s[2], w = s[3];
  const auto oh = h + bottom, ow = w + right;
  std::vector<double> v(planes * oh * ow, 0.0);
  copy_window(x.data().data(), h, w, v.data(), oh, ow, planes, false);
  return make_op_result({s[0], s[1], oh, ow}, std::move(v), {x},
                        [planes, h, w, oh, ow](Tensor::Node& self) {
                          copy_window(self.grad.data(), oh, ow,
                                      self.inputs[0]->grad_buffer().data(), h, w, planes, true);
                        });
}

Tensor crop(const Tensor& x, std::int64_t height, std::int64_t width) {
  require_nchw(x, "crop");
  const auto& s = x.shape();
  if (height < 1 || width < 1 || height > s[2] || width > s[3]) {
    throw ShapeError("crop to " + std::to_string(height) + "x" + std::to_string(width) +
                     " invalid for " + to_string(s));
  }
  const auto planes = s[0] * s[1], h = s[2], w = s[3];
  std::vector<double> v(planes * height * width);
  copy_window(x.data().data(), h, w, v.data(), height, width, planes, false);
  return make_op_result({s[0], s[1], height, width}, std::move(v), {x},
                        [planes, h, w, height, width](Tensor::Node& self) {
                          copy_window(self.grad.data(), height, width,
                                      self.inputs[0]->grad_buffer().data(), h, w, planes, true);
                        });
}

Tensor nearest_upsample(const Tensor& x, int rate) {
  if (rate < 1) throw ConfigError("nearest_upsample rate must be >= 1, got " + std::to_string(rate));
  require_nchw(x, "nearest_upsample");
  const auto& s = x.shape();
  const auto planes = s[0] * s[1], h = s[2], w = s[3];
  const auto oh = h * rate, ow = w * rate;
  std::vector<double> v(planes * oh * ow);
  const double* src = x.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t i = 0; i < oh; ++i) {
      const double* row = src + (p * h + i / rate) * w;
      double* d = v.data() + (p * oh + i) * ow;
      for (std::int64_t j = 0; j < ow; ++j) d[j] = row[j / rate];
    }
  }
  return make_op_result({s[0], s[1], oh, ow}, std::move(v), {x},
                        [planes, h, w, rate](Tensor::Node& self) {
                          auto& gx = self.inputs[0]->grad_buffer();
                          const auto oh = h * rate, ow = w * rate;
                          for (std::int64_t p = 0; p < planes; ++p) {
                            for (std::int64_t i = 0; i < oh; ++i) {
                              const double* g = self.grad.data() + (p * oh + i) * ow;
                              double* d = gx.data() + (p * h + i / rate) * w;
                              for (std::int64_t j = 0; j < ow; ++j) d[j / rate] += g[j];
                            }
                          }
                        });
}

}  // namespace hrvit
