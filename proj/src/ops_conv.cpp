#include <algorithm>

#include "hrvit/ops.hpp"
#include "ops_detail.hpp"

namespace hrvit {

using detail::wants_grad;

namespace {

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t ho, wo;
  int stride, padding, groups;
  std::int64_t cin_g() const { return cin / groups; }
  std::int64_t cout_g() const { return cout / groups; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
  bool depthwise() const { return cin_g() == 1; }
};

// Valid output range [lo, hi) along one axis for a kernel tap at `tap`.
inline void tap_range(std::int64_t tap, std::int64_t in_extent, std::int64_t out_extent,
                      int stride, int padding, std::int64_t& lo, std::int64_t& hi) {
  // in = o*stride - padding + tap must lie in [0, in_extent).
  const std::int64_t shift = padding - tap;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const std::int64_t top = in_extent - 1 + shift;  // o*stride <= top
  hi = top < 0 ? 0 : std::min<std::int64_t>(out_extent, top / stride + 1);
  if (lo > hi) lo = hi;
}

// col[(c*kh + i)*kw + j][oh*wo + ow] for channels [c0, c0+cn) of one image.
void im2col(const double* x, const ConvGeometry& g, std::int64_t cn, double* col) {
  const auto area = g.ho * g.wo;
  std::fill(col, col + cn * g.kh * g.kw * area, 0.0);
  for (std::int64_t c = 0; c < cn; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oh0, oh1;
      tap_range(i, g.h, g.ho, g.stride, g.padding, oh0, oh1);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ow0, ow1;
        tap_range(j, g.w, g.wo, g.stride, g.padding, ow0, ow1);
        double* row = col + ((c * g.kh + i) * g.kw + j) * area;
        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
          const double* src = plane + (oh * g.stride - g.padding + i) * g.w - g.padding + j;
          double* dst = row + oh * g.wo;
          for (std::int64_t ow = ow0; ow < ow1; ++ow) dst[ow] = src[ow * g.stride];
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, std::int64_t cn, double* x) {
  const auto area = g.ho * g.wo;
  for (std::int64_t c = 0; c < cn; ++c) {
    double* plane = x + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oh0, oh1;
      tap_range(i, g.h, g.ho, g.stride, g.padding, oh0, oh1);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ow0, ow1;
        tap_range(j, g.w, g.wo, g.stride, g.padding, ow0, ow1);
        const double* row = col + ((c * g.kh + i) * g.kw + j) * area;
        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
          double* dst = plane + (oh * g.stride - g.padding + i) * g.w - g.padding + j;
          const double* src = row + oh * g.wo;
          for (std::int64_t ow = ow0; ow < ow1; ++ow) dst[ow * g.stride] += src[ow];
        }
      }
    }
  }
}

void depthwise_forward(const double* x, const double* w, const ConvGeometry& g, double* out) {
  const auto mult = g.cout_g();
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const double* plane = x + (b * g.cin + co / mult) * g.h * g.w;
      const double* k = w + co * g.kh * g.kw;
      double* o = out + (b * g.cout + co) * g.ho * g.wo;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oh0, oh1;
        tap_range(i, g.h, g.ho, g.stride, g.padding, oh0, oh1);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          std::int64_t ow0, ow1;
          tap_range(j, g.w, g.wo, g.stride, g.padding, ow0, ow1);
          const double kv = k[i * g.kw + j];
          for (std::int64_t oh = oh0; oh < oh1; ++oh) {
            const double* src = plane + (oh * g.stride - g.padding + i) * g.w - g.padding + j;
            double* dst = o + oh * g.wo;
            if (g.stride == 1) {
              for (std::int64_t ow = ow0; ow < ow1; ++ow) dst[ow] += kv * src[ow];
            } else {
              for (std::int64_t ow = ow0; ow < ow1; ++ow) dst[ow] += kv * src[ow * g.stride];
            }
          }
        }
      }
    }
  }
}

void depthwise_backward(const double* x, const double* w, const double* gout,
                        const ConvGeometry& g, double* gx, double* gw) {
  const auto mult = g.cout_g();
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const auto plane_off = (b * g.cin + co / mult) * g.h * g.w;
      const double* gp = gout + (b * g.cout + co) * g.ho * g.wo;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oh0, oh1;
        tap_range(i, g.h, g.ho, g.stride, g.padding, oh0, oh1);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          std::int64_t ow0, ow1;
          tap_range(j, g.w, g.wo, g.stride, g.padding, ow0, ow1);
          const double kv = w[co * g.kh * g.kw + i * g.kw + j];
          double acc = 0.0;
          for (std::int64_t oh = oh0; oh < oh1; ++oh) {
            const auto in_off = plane_off + (oh * g.stride - g.padding + i) * g.w - g.padding + j;
            const double* go = gp + oh * g.wo;
            for (std::int64_t ow = ow0; ow < ow1; ++ow) {
              const auto idx = in_off + ow * g.stride;
              acc += go[ow] * x[idx];
              if (gx) gx[idx] += go[ow] * kv;
            }
          }
          if (gw) gw[co * g.kh * g.kw + i * g.kw + j] += acc;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              int groups) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects 4-D input and kernel, got " + to_string(x.shape()) +
                     " and " + to_string(w.shape()));
  }
  if (stride < 1 || padding < 0 || groups < 1) {
    throw ConfigError("conv2d needs stride >= 1, padding >= 0, groups >= 1");
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                 0, 0, stride, padding, groups};
  if (g.cin % groups != 0 || g.cout % groups != 0) {
    throw ConfigError("conv2d channels " + std::to_string(g.cin) + "->" +
                      std::to_string(g.cout) + " not divisible by groups " +
                      std::to_string(groups));
  }
  if (w.dim(1) != g.cin_g()) {
    throw ShapeError("conv2d kernel " + to_string(w.shape()) + " does not match input " +
                     to_string(x.shape()) + " with groups " + std::to_string(groups));
  }
  if (bias.defined() && bias.shape() != Shape{g.cout}) {
    throw ShapeError("conv2d bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  }
  const auto hspan = g.h + 2 * padding - g.kh, wspan = g.w + 2 * padding - g.kw;
  if (hspan < 0 || wspan < 0) {
    throw ShapeError("conv2d output is empty for input " + to_string(x.shape()) +
                     " and kernel " + to_string(w.shape()));
  }
  g.ho = hspan / stride + 1;
  g.wo = wspan / stride + 1;
  const auto area = g.ho * g.wo;
  std::vector<double> v(g.n * g.cout * area, 0.0);
  const double* px = x.data().data();
  const double* pw = w.data().data();
  if (g.depthwise()) {
    depthwise_forward(px, pw, g, v.data());
  } else {
    const auto kk = g.cin_g() * g.kh * g.kw;
    std::vector<double> col(g.pointwise() ? 0 : kk * area);
    for (std::int64_t b = 0; b < g.n; ++b) {
      for (int gi = 0; gi < groups; ++gi) {
        const double* xin = px + (b * g.cin + gi * g.cin_g()) * g.h * g.w;
        const double* cols = xin;
        if (!g.pointwise()) {
          im2col(xin, g, g.cin_g(), col.data());
          cols = col.data();
        }
        detail::MapMat(v.data() + (b * g.cout + gi * g.cout_g()) * area, g.cout_g(), area)
            .noalias() = detail::ConstMapMat(pw + gi * g.cout_g() * kk, g.cout_g(), kk) *
                         detail::ConstMapMat(cols, kk, area);
      }
    }
  }
  if (bias.defined()) {
    const double* pb = bias.data().data();
    for (std::int64_t b = 0; b < g.n; ++b) {
      for (std::int64_t c = 0; c < g.cout; ++c) {
        double* o = v.data() + (b * g.cout + c) * area;
        for (std::int64_t k = 0; k < area; ++k) o[k] += pb[c];
      }
    }
  }
  count_macs(g.n * g.cout * area * g.cin_g() * g.kh * g.kw);

  Shape out_shape{g.n, g.cout, g.ho, g.wo};
  auto backward = [g](Tensor::Node& self) {
    const auto area = g.ho * g.wo;
    const double* gout = self.grad.data();
    const double* px = self.inputs[0]->data.data();
    const double* pw = self.inputs[1]->data.data();
    double* gx = wants_grad(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gw = wants_grad(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    if (wants_grad(self, 2)) {
      double* gb = self.inputs[2]->grad_buffer().data();
      for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t c = 0; c < g.cout; ++c) {
          const double* go = gout + (b * g.cout + c) * area;
          double acc = 0.0;
          for (std::int64_t k = 0; k < area; ++k) acc += go[k];
          gb[c] += acc;
        }
      }
    }
    if (!gx && !gw) return;
    if (g.depthwise()) {
      depthwise_backward(px, pw, gout, g, gx, gw);
      return;
    }
    const auto kk = g.cin_g() * g.kh * g.kw;
    std::vector<double> col(g.pointwise() ? 0 : kk * area);
    std::vector<double> dcol(g.pointwise() || !gx ? 0 : kk * area);
    for (std::int64_t b = 0; b < g.n; ++b) {
      for (int gi = 0; gi < g.groups; ++gi) {
        const auto in_off = (b * g.cin + gi * g.cin_g()) * g.h * g.w;
        detail::ConstMapMat G(gout + (b * g.cout + gi * g.cout_g()) * area, g.cout_g(), area);
        detail::ConstMapMat W(pw + gi * g.cout_g() * kk, g.cout_g(), kk);
        if (gw) {
          const double* cols = px + in_off;
          if (!g.pointwise()) {
            im2col(px + in_off, g, g.cin_g(), col.data());
            cols = col.data();
          }
          detail::MapMat(gw + gi * g.cout_g() * kk, g.cout_g(), kk).noalias() +=
              G * detail::ConstMapMat(cols, kk, area).transpose();
        }
        if (gx) {
          if (g.pointwise()) {
            detail::MapMat(gx + in_off, kk, area).noalias() += W.transpose() * G;
          } else {
            detail::MapMat(dcol.data(), kk, area).noalias() = W.transpose() * G;
            col2im_add(dcol.data(), g, g.cin_g(), gx + in_off);
          }
        }
      }
    }
  };
  if (bias.defined()) {
    return make_op_result(std::move(out_shape), std::move(v), {x, w, bias}, backward);
  }
  return make_op_result(std::move(out_shape), std::move(v), {x, w}, backward);
}

}  // namespace hrvit
