#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>

#include "segnas/rng.hpp"

namespace segnas {

/// Dense NCHW tensor over a flat Eigen array. W is the fastest axis.
template <typename Scalar>
struct Tensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int n = 0, c = 0, h = 0, w = 0;
  Array data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(Array::Zero(static_cast<Eigen::Index>(n_) * c_ * h_ * w_)) {}

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  Eigen::Index size() const { return data.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  Scalar& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<Eigen::Index>(in) * c + ic) * h + iy) * w + ix];
  }
  Scalar at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<Eigen::Index>(in) * c + ic) * h + iy) * w + ix];
  }

  Scalar* plane(int in, int ic) {
    return data.data() + (static_cast<Eigen::Index>(in) * c + ic) * h * w;
  }
  const Scalar* plane(int in, int ic) const {
    return data.data() + (static_cast<Eigen::Index>(in) * c + ic) * h * w;
  }

  /// Channels-by-pixels view of one batch item (row = channel).
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  item_matrix(int in) {
    return {data.data() + static_cast<Eigen::Index>(in) * c * h * w, c, static_cast<Eigen::Index>(h) * w};
  }
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  item_matrix(int in) const {
    return {data.data() + static_cast<Eigen::Index>(in) * c * h * w, c, static_cast<Eigen::Index>(h) * w};
  }

  void fill_uniform(Rng& rng, Scalar lo, Scalar hi) {
    for (Eigen::Index i = 0; i < data.size(); ++i)
      data[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  }
  void fill_normal(Rng& rng, Scalar stddev) {
    for (Eigen::Index i = 0; i < data.size(); ++i)
      data[i] = static_cast<Scalar>(rng.normal() * stddev);
  }

  bool all_finite() const { return data.isFinite().all(); }
};

/// Integer label map (class ids per pixel).
struct Mask {
  int n = 0, h = 0, w = 0;
  Eigen::Array<int, Eigen::Dynamic, 1> data;

  Mask() = default;
  Mask(int n_, int h_, int w_)
      : n(n_), h(h_), w(w_),
        data(Eigen::Array<int, Eigen::Dynamic, 1>::Zero(static_cast<Eigen::Index>(n_) * h_ * w_)) {}

  int& at(int in, int iy, int ix) {
    return data[(static_cast<Eigen::Index>(in) * h + iy) * w + ix];
  }
  int at(int in, int iy, int ix) const {
    return data[(static_cast<Eigen::Index>(in) * h + iy) * w + ix];
  }
};

}  // namespace segnas
