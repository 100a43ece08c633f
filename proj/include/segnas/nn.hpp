#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "segnas/tensor.hpp"

namespace segnas {

// Low-level forward/backward kernels. All convolutions are "same"-padded for
// stride 1; gradients accumulate into the provided buffers.

struct ConvSpec {
  int kernel = 1;
  int dilation = 1;
  int stride = 1;

  int pad() const { return ((kernel - 1) * dilation) / 2; }
  int out_size(int in) const {
    return (in + 2 * pad() - (kernel - 1) * dilation - 1) / stride + 1;
  }
};

namespace detail {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename Scalar>
using ConstRowMajorMap = Eigen::Map<
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Patch matrix layout: [OH*OW, C*k*k] column-major, so each (ci,ky,kx) tap
// is a contiguous column over output positions.

template <typename Scalar>
void im2col(const Tensor<Scalar>& x, int item, const ConvSpec& spec,
            int oh, int ow, MatrixX<Scalar>& cols) {
  const int k = spec.kernel, d = spec.dilation, s = spec.stride, p = spec.pad();
  cols.resize(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(x.c) * k * k);
  for (int ci = 0; ci < x.c; ++ci) {
    const Scalar* src = x.plane(item, ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.col((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        const int off_y = ky * d - p, off_x = kx * d - p;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + off_y;
          Scalar* row = dst + static_cast<Eigen::Index>(oy) * ow;
          if (iy < 0 || iy >= x.h) {
            std::fill(row, row + ow, Scalar(0));
            continue;
          }
          const Scalar* srow = src + static_cast<Eigen::Index>(iy) * x.w;
          if (s == 1) {
            // contiguous copy for the in-bounds span, zero-fill the edges
            const int lo = std::max(0, -off_x);
            const int hi = std::min(ow, x.w - off_x);
            for (int ox = 0; ox < lo; ++ox) row[ox] = Scalar(0);
            if (hi > lo) std::copy(srow + lo + off_x, srow + hi + off_x, row + lo);
            for (int ox = std::max(lo, hi); ox < ow; ++ox) row[ox] = Scalar(0);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + off_x;
              row[ox] = (ix >= 0 && ix < x.w) ? srow[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const MatrixX<Scalar>& cols, int item, const ConvSpec& spec,
                int oh, int ow, Tensor<Scalar>& dx) {
  const int k = spec.kernel, d = spec.dilation, s = spec.stride, p = spec.pad();
  for (int ci = 0; ci < dx.c; ++ci) {
    Scalar* dst = dx.plane(item, ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.col((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        const int off_y = ky * d - p, off_x = kx * d - p;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + off_y;
          if (iy < 0 || iy >= dx.h) continue;
          const Scalar* row = src + static_cast<Eigen::Index>(oy) * ow;
          Scalar* drow = dst + static_cast<Eigen::Index>(iy) * dx.w;
          if (s == 1) {
            const int lo = std::max(0, -off_x);
            const int hi = std::min(ow, dx.w - off_x);
            for (int ox = lo; ox < hi; ++ox) drow[ox + off_x] += row[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + off_x;
              if (ix >= 0 && ix < dx.w) drow[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Full convolution, weight layout [cout][cin][k][k], optional bias [cout].
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& x,
                              Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> weight,
                              const Scalar* bias, int cout, const ConvSpec& spec) {
  const int oh = spec.out_size(x.h), ow = spec.out_size(x.w);
  const Eigen::Index K = static_cast<Eigen::Index>(x.c) * spec.kernel * spec.kernel;
  Tensor<Scalar> y(x.n, cout, oh, ow);
  detail::ConstRowMajorMap<Scalar> wm(weight.data(), cout, K);
  thread_local detail::MatrixX<Scalar> cols;
  for (int item = 0; item < x.n; ++item) {
    detail::im2col(x, item, spec, oh, ow, cols);
    y.item_matrix(item).noalias() = wm * cols.transpose();
  }
  if (bias) {
    for (int item = 0; item < x.n; ++item)
      for (int ci = 0; ci < cout; ++ci) {
        Scalar* p = y.plane(item, ci);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(oh) * ow; ++i) p[i] += bias[ci];
      }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv2d_backward(const Tensor<Scalar>& x,
                               Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> weight,
                               const Tensor<Scalar>& dy, const ConvSpec& spec,
                               Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dweight,
                               Scalar* dbias) {
  const int cout = dy.c, oh = dy.h, ow = dy.w;
  const Eigen::Index K = static_cast<Eigen::Index>(x.c) * spec.kernel * spec.kernel;
  Tensor<Scalar> dx(x.n, x.c, x.h, x.w);
  detail::ConstRowMajorMap<Scalar> wm(weight.data(), cout, K);
  detail::RowMajorMap<Scalar> dwm(dweight.data(), cout, K);
  thread_local detail::MatrixX<Scalar> cols, dcols;
  for (int item = 0; item < x.n; ++item) {
    detail::im2col(x, item, spec, oh, ow, cols);
    auto dym = dy.item_matrix(item);
    dwm.noalias() += dym * cols;
    dcols.noalias() = dym.transpose() * wm;
    detail::col2im_add(dcols, item, spec, oh, ow, dx);
  }
  if (dbias) {
    for (int item = 0; item < x.n; ++item)
      for (int ci = 0; ci < cout; ++ci) {
        const Scalar* p = dy.plane(item, ci);
        Scalar acc = 0;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(oh) * ow; ++i) acc += p[i];
        dbias[ci] += acc;
      }
  }
  return dx;
}

/// Depthwise convolution, weight layout [c][k][k], stride 1.
template <typename Scalar>
Tensor<Scalar> depthwise_forward(const Tensor<Scalar>& x,
                                 Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> weight,
                                 const ConvSpec& spec) {
  const int k = spec.kernel, d = spec.dilation, p = spec.pad();
  Tensor<Scalar> y(x.n, x.c, x.h, x.w);
  for (int item = 0; item < x.n; ++item) {
    for (int ci = 0; ci < x.c; ++ci) {
      const Scalar* src = x.plane(item, ci);
      const Scalar* wk = weight.data() + static_cast<Eigen::Index>(ci) * k * k;
      Scalar* dst = y.plane(item, ci);
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          Scalar acc = 0;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy - p + ky * d;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox - p + kx * d;
              if (ix < 0 || ix >= x.w) continue;
              acc += wk[ky * k + kx] * src[static_cast<Eigen::Index>(iy) * x.w + ix];
            }
          }
          dst[static_cast<Eigen::Index>(oy) * x.w + ox] = acc;
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> depthwise_backward(const Tensor<Scalar>& x,
                                  Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> weight,
                                  const Tensor<Scalar>& dy, const ConvSpec& spec,
                                  Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dweight) {
  const int k = spec.kernel, d = spec.dilation, p = spec.pad();
  Tensor<Scalar> dx(x.n, x.c, x.h, x.w);
  for (int item = 0; item < x.n; ++item) {
    for (int ci = 0; ci < x.c; ++ci) {
      const Scalar* src = x.plane(item, ci);
      const Scalar* g = dy.plane(item, ci);
      const Scalar* wk = weight.data() + static_cast<Eigen::Index>(ci) * k * k;
      Scalar* dwk = dweight.data() + static_cast<Eigen::Index>(ci) * k * k;
      Scalar* dsrc = dx.plane(item, ci);
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          const Scalar gv = g[static_cast<Eigen::Index>(oy) * x.w + ox];
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy - p + ky * d;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox - p + kx * d;
              if (ix < 0 || ix >= x.w) continue;
              dwk[ky * k + kx] += gv * src[static_cast<Eigen::Index>(iy) * x.w + ix];
              dsrc[static_cast<Eigen::Index>(iy) * x.w + ix] += gv * wk[ky * k + kx];
            }
          }
        }
      }
    }
  }
  return dx;
}

// --- Batch norm -------------------------------------------------------------

template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> xhat;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> invstd;  // per channel
  bool batch_stats = true;  // false when normalised with running statistics
};

/// Train mode: batch statistics, running stats updated in place.
/// Eval mode: running statistics; a cache, when requested, still supports
/// backward through the (fixed-statistics) affine transform.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward(
    const Tensor<Scalar>& x,
    Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> gamma,
    Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> beta,
    Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> running_mean,
    Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> running_var,
    bool training, BatchNormCache<Scalar>* cache, Scalar momentum = Scalar(0.1),
    Scalar eps = Scalar(1e-5)) {
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  const Eigen::Index m = static_cast<Eigen::Index>(x.n) * plane;
  Tensor<Scalar> y(x.n, x.c, x.h, x.w);
  if (cache) {
    cache->xhat = Tensor<Scalar>(x.n, x.c, x.h, x.w);
    cache->invstd.resize(x.c);
    cache->batch_stats = training;
  }
  using PlaneMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstPlaneMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  if (training) {
    for (int ci = 0; ci < x.c; ++ci) {
      Scalar mean = 0;
      for (int item = 0; item < x.n; ++item)
        mean += ConstPlaneMap(x.plane(item, ci), plane).sum();
      mean /= static_cast<Scalar>(m);
      Scalar var = 0;
      for (int item = 0; item < x.n; ++item)
        var += (ConstPlaneMap(x.plane(item, ci), plane) - mean).square().sum();
      var /= static_cast<Scalar>(m);
      const Scalar invstd = Scalar(1) / std::sqrt(var + eps);
      const Scalar unbiased =
          m > 1 ? var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : var;
      running_mean[ci] = (Scalar(1) - momentum) * running_mean[ci] + momentum * mean;
      running_var[ci] = (Scalar(1) - momentum) * running_var[ci] + momentum * unbiased;
      if (cache) cache->invstd[ci] = invstd;
      for (int item = 0; item < x.n; ++item) {
        ConstPlaneMap p(x.plane(item, ci), plane);
        PlaneMap q(y.plane(item, ci), plane);
        if (cache) {
          PlaneMap xh(cache->xhat.plane(item, ci), plane);
          xh = (p - mean) * invstd;
          q = gamma[ci] * xh + beta[ci];
        } else {
          q = gamma[ci] * ((p - mean) * invstd) + beta[ci];
        }
      }
    }
  } else {
    for (int ci = 0; ci < x.c; ++ci) {
      const Scalar invstd = Scalar(1) / std::sqrt(running_var[ci] + eps);
      if (cache) cache->invstd[ci] = invstd;
      for (int item = 0; item < x.n; ++item) {
        ConstPlaneMap p(x.plane(item, ci), plane);
        PlaneMap q(y.plane(item, ci), plane);
        if (cache) {
          PlaneMap xh(cache->xhat.plane(item, ci), plane);
          xh = (p - running_mean[ci]) * invstd;
          q = gamma[ci] * xh + beta[ci];
        } else {
          q = gamma[ci] * ((p - running_mean[ci]) * invstd) + beta[ci];
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> batchnorm_backward(
    const BatchNormCache<Scalar>& cache, const Tensor<Scalar>& dy,
    Eigen::Ref<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> gamma,
    Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dgamma,
    Eigen::Ref<Eigen::Array<Scalar, Eigen::Dynamic, 1>> dbeta) {
  const auto& xhat = cache.xhat;
  const Eigen::Index plane = static_cast<Eigen::Index>(dy.h) * dy.w;
  const Eigen::Index m = static_cast<Eigen::Index>(dy.n) * plane;
  Tensor<Scalar> dx(dy.n, dy.c, dy.h, dy.w);
  using PlaneMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstPlaneMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  for (int ci = 0; ci < dy.c; ++ci) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (int item = 0; item < dy.n; ++item) {
      ConstPlaneMap g(dy.plane(item, ci), plane);
      ConstPlaneMap xh(xhat.plane(item, ci), plane);
      sum_dy += g.sum();
      sum_dy_xhat += (g * xh).sum();
    }
    dgamma[ci] += sum_dy_xhat;
    dbeta[ci] += sum_dy;
    const Scalar scale = gamma[ci] * cache.invstd[ci];
    const Scalar mean_dy = cache.batch_stats ? sum_dy / static_cast<Scalar>(m) : 0;
    const Scalar mean_dy_xhat =
        cache.batch_stats ? sum_dy_xhat / static_cast<Scalar>(m) : 0;
    for (int item = 0; item < dy.n; ++item) {
      ConstPlaneMap g(dy.plane(item, ci), plane);
      ConstPlaneMap xh(xhat.plane(item, ci), plane);
      PlaneMap d(dx.plane(item, ci), plane);
      d = scale * (g - mean_dy - xh * mean_dy_xhat);
    }
  }
  return dx;
}

// --- Pointwise and shape ops --------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = x;
  y.data = y.data.max(Scalar(0));
  return y;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx = dy;
  dx.data *= (y.data > Scalar(0)).template cast<Scalar>();
  return dx;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.n, x.c, 1, 1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  for (int item = 0; item < x.n; ++item)
    for (int ci = 0; ci < x.c; ++ci) {
      const Scalar* p = x.plane(item, ci);
      Scalar acc = 0;
      for (Eigen::Index i = 0; i < plane; ++i) acc += p[i];
      y.at(item, ci, 0, 0) = acc / static_cast<Scalar>(plane);
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Tensor<Scalar>& dy, int h, int w) {
  Tensor<Scalar> dx(dy.n, dy.c, h, w);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(static_cast<Eigen::Index>(h) * w);
  for (int item = 0; item < dy.n; ++item)
    for (int ci = 0; ci < dy.c; ++ci) {
      Scalar* d = dx.plane(item, ci);
      const Scalar g = dy.at(item, ci, 0, 0) * inv;
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h) * w; ++i) d[i] = g;
    }
  return dx;
}

namespace detail {

struct LerpTap {
  int lo, hi;
  double frac;
};

inline LerpTap lerp_tap(int out_index, int out_size, int in_size) {
  // Half-pixel-centres convention; exact identity for equal sizes.
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (out_index + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  if (src > in_size - 1) src = in_size - 1;
  const int lo = static_cast<int>(src);
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> bilinear_resize_forward(const Tensor<Scalar>& x, int oh, int ow) {
  Tensor<Scalar> y(x.n, x.c, oh, ow);
  for (int item = 0; item < x.n; ++item)
    for (int ci = 0; ci < x.c; ++ci) {
      const Scalar* src = x.plane(item, ci);
      Scalar* dst = y.plane(item, ci);
      for (int oy = 0; oy < oh; ++oy) {
        const auto ty = detail::lerp_tap(oy, oh, x.h);
        for (int ox = 0; ox < ow; ++ox) {
          const auto tx = detail::lerp_tap(ox, ow, x.w);
          const Scalar v00 = src[static_cast<Eigen::Index>(ty.lo) * x.w + tx.lo];
          const Scalar v01 = src[static_cast<Eigen::Index>(ty.lo) * x.w + tx.hi];
          const Scalar v10 = src[static_cast<Eigen::Index>(ty.hi) * x.w + tx.lo];
          const Scalar v11 = src[static_cast<Eigen::Index>(ty.hi) * x.w + tx.hi];
          const Scalar top = v00 + static_cast<Scalar>(tx.frac) * (v01 - v00);
          const Scalar bot = v10 + static_cast<Scalar>(tx.frac) * (v11 - v10);
          dst[static_cast<Eigen::Index>(oy) * ow + ox] =
              top + static_cast<Scalar>(ty.frac) * (bot - top);
        }
      }
    }
  return y;
}

template <typename Scalar>
Tensor<Scalar> bilinear_resize_backward(const Tensor<Scalar>& dy, int ih, int iw) {
  Tensor<Scalar> dx(dy.n, dy.c, ih, iw);
  for (int item = 0; item < dy.n; ++item)
    for (int ci = 0; ci < dy.c; ++ci) {
      const Scalar* g = dy.plane(item, ci);
      Scalar* d = dx.plane(item, ci);
      for (int oy = 0; oy < dy.h; ++oy) {
        const auto ty = detail::lerp_tap(oy, dy.h, ih);
        for (int ox = 0; ox < dy.w; ++ox) {
          const auto tx = detail::lerp_tap(ox, dy.w, iw);
          const Scalar gv = g[static_cast<Eigen::Index>(oy) * dy.w + ox];
          const Scalar fy = static_cast<Scalar>(ty.frac);
          const Scalar fx = static_cast<Scalar>(tx.frac);
          d[static_cast<Eigen::Index>(ty.lo) * iw + tx.lo] += gv * (1 - fy) * (1 - fx);
          d[static_cast<Eigen::Index>(ty.lo) * iw + tx.hi] += gv * (1 - fy) * fx;
          d[static_cast<Eigen::Index>(ty.hi) * iw + tx.lo] += gv * fy * (1 - fx);
          d[static_cast<Eigen::Index>(ty.hi) * iw + tx.hi] += gv * fy * fx;
        }
      }
    }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> channel_concat(const std::vector<const Tensor<Scalar>*>& xs) {
  int c = 0;
  for (const auto* x : xs) c += x->c;
  Tensor<Scalar> y(xs[0]->n, c, xs[0]->h, xs[0]->w);
  const Eigen::Index plane = static_cast<Eigen::Index>(y.h) * y.w;
  for (int item = 0; item < y.n; ++item) {
    int co = 0;
    for (const auto* x : xs) {
      for (int ci = 0; ci < x->c; ++ci, ++co)
        std::copy_n(x->plane(item, ci), plane, y.plane(item, co));
    }
  }
  return y;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> channel_split(const Tensor<Scalar>& dy,
                                          const std::vector<int>& channels) {
  std::vector<Tensor<Scalar>> out;
  const Eigen::Index plane = static_cast<Eigen::Index>(dy.h) * dy.w;
  int co = 0;
  for (int c : channels) {
    Tensor<Scalar> d(dy.n, c, dy.h, dy.w);
    for (int item = 0; item < dy.n; ++item)
      for (int ci = 0; ci < c; ++ci)
        std::copy_n(dy.plane(item, co + ci), plane, d.plane(item, ci));
    co += c;
    out.push_back(std::move(d));
  }
  return out;
}

// --- Losses -----------------------------------------------------------------

inline constexpr int kIgnoreLabel = -1;

template <typename Scalar>
struct CeResult {
  Scalar loss = 0;
  Tensor<Scalar> dlogits;
  Eigen::Index scored_pixels = 0;
};

/// Softmax cross-entropy, mean over scored pixels. Throws on out-of-range
/// class ids.
template <typename Scalar>
CeResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                       const Mask& labels) {
  if (logits.n != labels.n || logits.h != labels.h || logits.w != labels.w)
    throw std::invalid_argument("logits/labels shape mismatch");
  CeResult<Scalar> res;
  res.dlogits = Tensor<Scalar>(logits.n, logits.c, logits.h, logits.w);
  const Eigen::Index plane = static_cast<Eigen::Index>(logits.h) * logits.w;

  Eigen::Index scored = 0;
  for (int item = 0; item < labels.n; ++item)
    for (Eigen::Index i = 0; i < plane; ++i) {
      const int label = labels.data[static_cast<Eigen::Index>(item) * plane + i];
      if (label == kIgnoreLabel) continue;
      if (label < 0 || label >= logits.c)
        throw std::invalid_argument("class id " + std::to_string(label) +
                                    " outside [0," + std::to_string(logits.c) + ")");
      ++scored;
    }
  res.scored_pixels = scored;
  if (scored == 0) return res;

  double total = 0;
  const Scalar invm = Scalar(1) / static_cast<Scalar>(scored);
  std::vector<Scalar> z(logits.c), p(logits.c);
  for (int item = 0; item < logits.n; ++item) {
    for (Eigen::Index i = 0; i < plane; ++i) {
      const int label = labels.data[static_cast<Eigen::Index>(item) * plane + i];
      for (int ci = 0; ci < logits.c; ++ci) z[ci] = logits.plane(item, ci)[i];
      Scalar zmax = z[0];
      for (int ci = 1; ci < logits.c; ++ci) zmax = std::max(zmax, z[ci]);
      Scalar sum = 0;
      for (int ci = 0; ci < logits.c; ++ci) {
        p[ci] = std::exp(z[ci] - zmax);
        sum += p[ci];
      }
      const Scalar logsum = std::log(sum) + zmax;
      if (label == kIgnoreLabel) continue;
      total += static_cast<double>(logsum - z[label]);
      for (int ci = 0; ci < logits.c; ++ci) {
        const Scalar soft = p[ci] / sum;
        res.dlogits.plane(item, ci)[i] =
            (soft - (ci == label ? Scalar(1) : Scalar(0))) * invm;
      }
    }
  }
  res.loss = static_cast<Scalar>(total / static_cast<double>(scored));
  return res;
}

template <typename Scalar>
struct MseResult {
  Scalar loss = 0;
  Tensor<Scalar> da;
};

/// Mean squared error over all elements; gradient w.r.t. the first argument.
template <typename Scalar>
MseResult<Scalar> mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse shape mismatch");
  MseResult<Scalar> res;
  const auto diff = (a.data - b.data).eval();
  res.loss = static_cast<Scalar>(diff.square().sum() / static_cast<Scalar>(a.size()));
  res.da = Tensor<Scalar>(a.n, a.c, a.h, a.w);
  res.da.data = diff * (Scalar(2) / static_cast<Scalar>(a.size()));
  return res;
}

}  // namespace segnas
