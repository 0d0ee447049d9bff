#pragma once

#include <Eigen/Dense>

#include <string>

#include "sara/errors.hpp"

namespace sara {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Channel-major raster. `data(c, y * width + x)` holds channel c of pixel
/// (y, x); with Eigen's column-major storage each pixel's channel vector is
/// contiguous in memory.
template <class S>
struct Grid {
  int height = 0;
  int width = 0;
  Mat<S> data;

  Grid() = default;
  Grid(int channels, int h, int w)
      : height(h), width(w), data(Mat<S>::Zero(channels, Eigen::Index(h) * w)) {}
  Grid(Mat<S> values, int h, int w) : height(h), width(w), data(std::move(values)) {
    if (data.cols() != Eigen::Index(h) * w)
      throw ShapeError("grid: value columns do not match height*width");
  }

  int channels() const { return int(data.rows()); }
  Eigen::Index pixels() const { return data.cols(); }

  S& at(int c, int y, int x) { return data(c, Eigen::Index(y) * width + x); }
  S at(int c, int y, int x) const { return data(c, Eigen::Index(y) * width + x); }

  template <class T>
  Grid<T> cast() const {
    return Grid<T>(data.template cast<T>(), height, width);
  }

  static Grid constant(int channels, int h, int w, S value) {
    Grid g(channels, h, w);
    g.data.setConstant(value);
    return g;
  }
};

/// 3-channel color raster with values in [-1, 1].
using Image = Grid<float>;
/// 1-channel grid with values in [0, 1].
using RegionMask = Grid<float>;

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace sara
