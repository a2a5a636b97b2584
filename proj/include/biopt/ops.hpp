#pragma once

// Differentiable dense kernels with hand-written backward passes.
// Feature maps are H x W x C row-major; conv kernels are kh x kw x Cin x Cout.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "biopt/tensor.hpp"

namespace biopt {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  const long span = static_cast<long>(g.dilation) * (static_cast<long>(k) - 1) + 1;
  const long num = static_cast<long>(in) + 2L * g.pad - span;
  if (num < 0) throw ShapeError("conv2d: kernel larger than padded input");
  return static_cast<std::size_t>(num / g.stride + 1);
}

namespace detail {

inline void check_conv_args(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be HxWxC, got " + shape_str(input.shape()));
  if (kernel.rank() != 4)
    throw ShapeError("conv2d: kernel must be khxkwxCinxCout, got " + shape_str(kernel.shape()));
  if (kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(kernel.shape()));
  if (g.stride < 1 || g.pad < 0 || g.dilation < 1)
    throw ShapeError("conv2d: need stride >= 1, pad >= 0, dilation >= 1");
  if (input.dim(2) != kernel.dim(2))
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(2)) +
                     " channels but kernel expects " + std::to_string(kernel.dim(2)));
}

}  // namespace detail

/// Cross-correlation. Each output element sums kernel rows, then kernel
/// columns, then input channels, in that nesting order.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  detail::check_conv_args(input, kernel, g);
  const std::size_t H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  const std::size_t Ho = conv_out_extent(H, kh, g), Wo = conv_out_extent(W, kw, g);
  Tensor out({Ho, Wo, Cout});
  const double* in = input.data();
  const double* ker = kernel.data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* o = &out(oy, ox, 0);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky) * g.dilation;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx) * g.dilation;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* px = in + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
          const double* kk = ker + (ky * kw + kx) * Cin * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double v = px[ci];
            const double* kr = kk + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) o[co] += v * kr[co];
          }
        }
      }
    }
  }
  require_finite(out, "conv2d");
  return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  return conv2d(input, kernel, ConvGeometry{stride, pad, 1});
}

struct ConvGrads {
  Tensor input;
  Tensor kernel;
};

/// Gradients of sum(grad_out * conv2d(input, kernel)) with respect to both operands.
inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                 const ConvGeometry& g) {
  detail::check_conv_args(input, kernel, g);
  const std::size_t H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  const std::size_t Ho = conv_out_extent(H, kh, g), Wo = conv_out_extent(W, kw, g);
  if (grad_out.shape() != Shape{Ho, Wo, Cout})
    throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) +
                     " does not match conv output " + shape_str({Ho, Wo, Cout}));
  ConvGrads r{Tensor(input.shape()), Tensor(kernel.shape())};
  const double* in = input.data();
  const double* ker = kernel.data();
  double* gin = r.input.data();
  double* gker = r.kernel.data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      const double* go = grad_out.data() + (oy * Wo + ox) * Cout;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky) * g.dilation;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx) * g.dilation;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const std::size_t pix = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
          const std::size_t kbase = (ky * kw + kx) * Cin * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double v = in[pix + ci];
            const double* kr = ker + kbase + ci * Cout;
            double* gk = gker + kbase + ci * Cout;
            double acc = 0.0;
            for (std::size_t co = 0; co < Cout; ++co) {
              acc += kr[co] * go[co];
              gk[co] += v * go[co];
            }
            gin[pix + ci] += acc;
          }
        }
      }
    }
  }
  return r;
}

inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                 int stride, int pad) {
  return conv2d_backward(input, kernel, grad_out, ConvGeometry{stride, pad, 1});
}

inline Tensor relu(Tensor x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Passes grad where x > 0; the subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& x, Tensor grad_out) {
  x.require_same_shape(grad_out, "relu_backward");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] > 0.0)) grad_out[i] = 0.0;
  return grad_out;
}

namespace detail {

struct LinearTap {
  std::size_t lo, hi;
  double frac;
};

// Half-pixel (align_corners = false) source coordinate.
inline LinearTap bilinear_tap(std::size_t dst, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(dst) + 0.5) * (static_cast<double>(in) / static_cast<double>(out)) - 0.5;
  if (src < 0.0) src = 0.0;
  auto lo = static_cast<std::size_t>(std::floor(src));
  if (lo > in - 1) lo = in - 1;
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace detail

inline Tensor resize_bilinear(const Tensor& x, std::size_t h2, std::size_t w2) {
  if (x.rank() != 3) throw ShapeError("resize_bilinear: expected HxWxC, got " + shape_str(x.shape()));
  if (h2 < 1 || w2 < 1) throw ShapeError("resize_bilinear: target size must be at least 1x1");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (h2 == H && w2 == W) return x;
  Tensor out({h2, w2, C});
  std::vector<detail::LinearTap> xs(w2);
  for (std::size_t j = 0; j < w2; ++j) xs[j] = detail::bilinear_tap(j, W, w2);
  for (std::size_t i = 0; i < h2; ++i) {
    const auto ty = detail::bilinear_tap(i, H, h2);
    for (std::size_t j = 0; j < w2; ++j) {
      const auto& tx = xs[j];
      for (std::size_t c = 0; c < C; ++c) {
        const double a = x(ty.lo, tx.lo, c), b = x(ty.lo, tx.hi, c);
        const double d = x(ty.hi, tx.lo, c), e = x(ty.hi, tx.hi, c);
        const double top = a + tx.frac * (b - a);
        const double bot = d + tx.frac * (e - d);
        out(i, j, c) = top + ty.frac * (bot - top);
      }
    }
  }
  require_finite(out, "resize_bilinear");
  return out;
}

/// Nearest-neighbour sampling at pixel centres.
inline LabelMask resize_nearest_labels(const LabelMask& m, std::size_t h2, std::size_t w2) {
  if (h2 < 1 || w2 < 1) throw ShapeError("resize_nearest_labels: target size must be at least 1x1");
  if (h2 == m.height && w2 == m.width) return m;
  LabelMask out(h2, w2);
  auto src = [](std::size_t dst, std::size_t in, std::size_t outn) {
    const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(dst) + 0.5) *
                                                       static_cast<double>(in) / static_cast<double>(outn)));
    return std::min(s, in - 1);
  };
  for (std::size_t i = 0; i < h2; ++i) {
    const std::size_t sy = src(i, m.height, h2);
    for (std::size_t j = 0; j < w2; ++j) out(i, j) = m(sy, src(j, m.width, w2));
  }
  return out;
}

/// Softmax along the last axis with max subtraction.
inline Tensor softmax_rows(Tensor scores) {
  if (scores.rank() == 0 || scores.empty()) return scores;
  const std::size_t K = scores.shape().back();
  const std::size_t rows = scores.size() / K;
  for (std::size_t r = 0; r < rows; ++r) {
    double* s = scores.data() + r * K;
    double mx = s[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, s[k]);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      s[k] = std::exp(s[k] - mx);
      total += s[k];
    }
    for (std::size_t k = 0; k < K; ++k) s[k] /= total;
  }
  require_finite(scores, "softmax_rows");
  return scores;
}

inline constexpr double kLogFloor = 1e-12;

/// Mean over pixels of -log p(target); probabilities are clamped to 1e-12 first.
inline double cross_entropy(const SoftMask& soft, const LabelMask& target) {
  if (soft.probs.rank() != 3) throw ShapeError("cross_entropy: soft mask must be HxWxK");
  if (soft.height() != target.height || soft.width() != target.width)
    throw ShapeError("cross_entropy: soft mask " + shape_str(soft.probs.shape()) + " vs target " +
                     std::to_string(target.height) + "x" + std::to_string(target.width));
  const std::size_t K = soft.classes();
  double total = 0.0;
  for (std::size_t p = 0; p < target.size(); ++p) {
    const int t = target.labels[p];
    if (t < 0 || static_cast<std::size_t>(t) >= K)
      throw ShapeError("cross_entropy: label " + std::to_string(t) + " outside [0, " +
                       std::to_string(K - 1) + "]");
    total += -std::log(std::max(soft.probs[p * K + static_cast<std::size_t>(t)], kLogFloor));
  }
  const double ce = total / static_cast<double>(target.size());
  if (!std::isfinite(ce)) throw NumericalError("cross_entropy: non-finite loss");
  return ce;
}

}  // namespace biopt
