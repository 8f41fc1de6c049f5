#include "rbopt/affine.hpp"

#include <cmath>
#include <limits>

namespace rbopt {

SparseMatrix AffineOperator::evaluate(const Vector& mu) const {
  require(!components.empty(), "AffineOperator: no components");
  require(components.size() == thetas.size(), "AffineOperator: component/theta mismatch");
  SparseMatrix out = thetas[0](mu) * components[0];
  for (size_t q = 1; q < components.size(); ++q) out += thetas[q](mu) * components[q];
  return out;
}

Vector AffineOperator::apply(const Vector& mu, const Vector& u) const {
  Vector out = Vector::Zero(u.size());
  for (size_t q = 0; q < components.size(); ++q) {
    const double t = thetas[q](mu);
    if (t != 0.0) out += t * (components[q] * u);
  }
  return out;
}

Vector AffineOperator::apply_partial(const Vector& mu, int i, const Vector& u) const {
  Vector out = Vector::Zero(u.size());
  for (size_t q = 0; q < components.size(); ++q) {
    const double t = thetas[q].d(mu, i);
    if (t != 0.0) out += t * (components[q] * u);
  }
  return out;
}

Vector AffineFunctional::evaluate(const Vector& mu) const {
  require(!components.empty(), "AffineFunctional: no components");
  require(components.size() == thetas.size(), "AffineFunctional: component/theta mismatch");
  Vector out = thetas[0](mu) * components[0];
  for (size_t q = 1; q < components.size(); ++q) out += thetas[q](mu) * components[q];
  return out;
}

Vector AffineFunctional::evaluate_partial(const Vector& mu, int i) const {
  require(!components.empty(), "AffineFunctional: no components");
  Vector out = Vector::Zero(components[0].size());
  for (size_t q = 0; q < components.size(); ++q) {
    const double t = thetas[q].d(mu, i);
    if (t != 0.0) out += t * components[q];
  }
  return out;
}

double min_theta_coercivity(const AffineOperator& op, const Vector& mu_bar, const Vector& mu,
                            double alpha_bar) {
  double min_ratio = std::numeric_limits<double>::infinity();
  for (const auto& theta : op.thetas) {
    const double tb = theta(mu_bar);
    const double t = theta(mu);
    require(tb != 0.0, "min_theta: theta(mu_bar) vanishes");
    const double ratio = t / tb;
    require(ratio > 0.0, "min_theta: sign change between mu and mu_bar");
    min_ratio = std::min(min_ratio, ratio);
  }
  return alpha_bar * min_ratio;
}

double max_theta_continuity(const AffineOperator& op, const Vector& mu_bar, const Vector& mu,
                            double gamma_bar) {
  double max_ratio = 0.0;
  for (const auto& theta : op.thetas) {
    const double tb = theta(mu_bar);
    const double t = theta(mu);
    require(tb != 0.0, "max_theta: theta(mu_bar) vanishes");
    const double ratio = t / tb;
    require(ratio > 0.0, "max_theta: sign change between mu and mu_bar");
    max_ratio = std::max(max_ratio, ratio);
  }
  return gamma_bar * max_ratio;
}

double max_theta_continuity_coeffs(const AffineOperator& op, const Vector& mu_bar,
                                   const Vector& coeffs, double gamma_bar) {
  require(static_cast<size_t>(coeffs.size()) == op.thetas.size(),
          "max_theta_coeffs: coefficient count mismatch");
  double max_ratio = 0.0;
  for (Eigen::Index q = 0; q < coeffs.size(); ++q) {
    require(coeffs[q] >= 0.0, "max_theta_coeffs: negative coefficient");
    const double tb = op.thetas[static_cast<size_t>(q)](mu_bar);
    require(tb > 0.0, "max_theta_coeffs: theta(mu_bar) not positive");
    max_ratio = std::max(max_ratio, coeffs[q] / tb);
  }
  return gamma_bar * max_ratio;
}

}  // namespace rbopt
