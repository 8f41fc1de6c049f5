#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "rbopt/params.hpp"

namespace rbopt {

/// Scalar coefficient functional theta(mu) with first and second partials.
/// Missing derivatives default to zero, which covers constant and
/// coordinate coefficients exactly.
struct ThetaFunction {
  std::function<double(const Vector&)> value;
  std::function<double(const Vector&, int)> partial;           // d theta / d mu_i
  std::function<double(const Vector&, int, int)> partial2;     // d^2 theta / d mu_i d mu_l

  double operator()(const Vector& mu) const { return value(mu); }

  double d(const Vector& mu, int i) const { return partial ? partial(mu, i) : 0.0; }

  double d2(const Vector& mu, int i, int l) const {
    return partial2 ? partial2(mu, i, l) : 0.0;
  }

  static ThetaFunction constant(double c) {
    ThetaFunction t;
    t.value = [c](const Vector&) { return c; };
    return t;
  }

  /// theta(mu) = mu_i
  static ThetaFunction coordinate(int i) {
    ThetaFunction t;
    t.value = [i](const Vector& mu) { return mu[i]; };
    t.partial = [i](const Vector&, int j) { return j == i ? 1.0 : 0.0; };
    return t;
  }
};

inline Vector theta_values(const std::vector<ThetaFunction>& thetas, const Vector& mu) {
  Vector out(static_cast<Eigen::Index>(thetas.size()));
  for (size_t q = 0; q < thetas.size(); ++q) out[static_cast<Eigen::Index>(q)] = thetas[q](mu);
  return out;
}

inline Vector theta_partials(const std::vector<ThetaFunction>& thetas, const Vector& mu, int i) {
  Vector out(static_cast<Eigen::Index>(thetas.size()));
  for (size_t q = 0; q < thetas.size(); ++q)
    out[static_cast<Eigen::Index>(q)] = thetas[q].d(mu, i);
  return out;
}

}  // namespace rbopt
