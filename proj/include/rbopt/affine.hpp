#pragma once

#include <vector>

#include "rbopt/params.hpp"
#include "rbopt/theta.hpp"

namespace rbopt {

/// Parameter-separable bilinear form: sum_q theta_q(mu) * A_q.
struct AffineOperator {
  std::vector<SparseMatrix> components;
  std::vector<ThetaFunction> thetas;
  // Set when all components are symmetric positive semidefinite and all
  // thetas stay positive on the parameter domain; enables min/max-theta.
  bool psd_components = false;

  size_t size() const { return components.size(); }

  SparseMatrix evaluate(const Vector& mu) const;
  Vector apply(const Vector& mu, const Vector& u) const;

  /// d/dmu_i of the form applied to u.
  Vector apply_partial(const Vector& mu, int i, const Vector& u) const;
};

/// Parameter-separable linear functional: sum_q theta_q(mu) * l_q.
struct AffineFunctional {
  std::vector<Vector> components;
  std::vector<ThetaFunction> thetas;

  size_t size() const { return components.size(); }

  Vector evaluate(const Vector& mu) const;
  Vector evaluate_partial(const Vector& mu, int i) const;
};

/// min-theta lower bound on the coercivity constant w.r.t. the energy
/// product at mu_bar: alpha_LB(mu) = alpha_bar * min_q theta_q(mu)/theta_q(mu_bar).
/// Requires sign-consistent, nonvanishing thetas at mu_bar.
double min_theta_coercivity(const AffineOperator& op, const Vector& mu_bar, const Vector& mu,
                            double alpha_bar = 1.0);

/// max-theta upper bound on the continuity constant w.r.t. the same product:
/// gamma_UB(mu) = gamma_bar * max_q theta_q(mu)/theta_q(mu_bar).
double max_theta_continuity(const AffineOperator& op, const Vector& mu_bar, const Vector& mu,
                            double gamma_bar = 1.0);

/// max-theta style bound for nonnegative coefficient vectors c (e.g. partial
/// derivatives of the thetas): cont(sum_q c_q a_q) <= max_q c_q / theta_q(mu_bar).
double max_theta_continuity_coeffs(const AffineOperator& op, const Vector& mu_bar,
                                   const Vector& coeffs, double gamma_bar = 1.0);

}  // namespace rbopt
