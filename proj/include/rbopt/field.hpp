#pragma once

#include <Eigen/Dense>

#include "rbopt/params.hpp"

namespace rbopt {

/// Piecewise constant scalar coefficient on an N x N grid of data cells
/// covering the unit square. Cell (ix, iy) holds values[iy * n + ix].
struct PiecewiseConstantField {
  int resolution = 1;  // cells per axis
  Vector values;       // size resolution^2

  PiecewiseConstantField() = default;
  PiecewiseConstantField(int n, Vector vals) : resolution(n), values(std::move(vals)) {
    require(n >= 1, "PiecewiseConstantField: resolution must be positive");
    require(values.size() == static_cast<Eigen::Index>(n) * n,
            "PiecewiseConstantField: value count does not match resolution");
  }

  static PiecewiseConstantField constant(double c, int n = 1) {
    return PiecewiseConstantField(n, Vector::Constant(static_cast<Eigen::Index>(n) * n, c));
  }

  double operator()(int ix, int iy) const { return values[iy * resolution + ix]; }

  /// Value at a physical point in [0,1]^2.
  double at(double x, double y) const {
    int ix = static_cast<int>(x * resolution);
    int iy = static_cast<int>(y * resolution);
    if (ix >= resolution) ix = resolution - 1;
    if (iy >= resolution) iy = resolution - 1;
    if (ix < 0) ix = 0;
    if (iy < 0) iy = 0;
    return (*this)(ix, iy);
  }
};

}  // namespace rbopt
