#include "rbopt/fom.hpp"

#include "rbopt/assembly.hpp"
#include "rbopt/field.hpp"

namespace rbopt {

double QuadraticObjective::value(const Vector& mu, const Vector& u) const {
  double out = theta ? theta(mu) : 0.0;
  if (!j.components.empty()) out += j.evaluate(mu).dot(u);
  if (!k.components.empty()) out += u.dot(k.apply(mu, u));
  return out;
}

Vector QuadraticObjective::state_derivative(const Vector& mu, const Vector& u) const {
  Vector out = Vector::Zero(u.size());
  if (!j.components.empty()) out += j.evaluate(mu);
  if (!k.components.empty()) out += 2.0 * k.apply(mu, u);
  return out;
}

Vector QuadraticObjective::mu_gradient(const Vector& mu, const Vector& u) const {
  const int P = static_cast<int>(mu.size());
  Vector out = theta_gradient ? theta_gradient(mu) : Vector::Zero(P);
  for (int i = 0; i < P; ++i) {
    if (!j.components.empty()) out[i] += j.evaluate_partial(mu, i).dot(u);
    if (!k.components.empty()) out[i] += u.dot(k.apply_partial(mu, i, u));
  }
  return out;
}

void FomSystem::finalize() {
  product = a.evaluate(mu_bar);
  const PiecewiseConstantField unit = PiecewiseConstantField::constant(1.0);
  h1_seminorm = assemble_matrix(grid, unit, ComponentKind::Diffusion);
  l2_mass = assemble_matrix(grid, unit, ComponentKind::L2);
  product_solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>();
  product_solver_->compute(product);
  require(product_solver_->info() == Eigen::Success, "FomSystem: energy product is singular");
}

namespace {
Vector direct_solve(const SparseMatrix& A, const Vector& b) {
  Eigen::SimplicialLDLT<SparseMatrix> solver(A);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("FomSystem: operator factorization failed");
  Vector x = solver.solve(b);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("FomSystem: operator solve failed");
  return x;
}
}  // namespace

Vector FomSystem::solve_primal(const Vector& mu) const {
  return direct_solve(a.evaluate(mu), l.evaluate(mu));
}

Vector FomSystem::solve_dual(const Vector& mu, const Vector& u) const {
  return direct_solve(a.evaluate(mu), objective.state_derivative(mu, u));
}

Vector FomSystem::primal_residual(const Vector& mu, const Vector& u) const {
  return l.evaluate(mu) - a.apply(mu, u);
}

Vector FomSystem::dual_residual(const Vector& mu, const Vector& u, const Vector& p) const {
  return objective.state_derivative(mu, u) - a.apply(mu, p);
}

Vector FomSystem::gradient(const Vector& mu, const Vector& u, const Vector& p) const {
  const int P = n_params();
  Vector out = objective.mu_gradient(mu, u);
  for (int i = 0; i < P; ++i) {
    out[i] += l.evaluate_partial(mu, i).dot(p);
    out[i] -= p.dot(a.apply_partial(mu, i, u));
  }
  return out;
}

Vector FomSystem::solve_sensitivity(const Vector& mu, const Vector& direction,
                                    SensitivityKind kind, const Vector& u, const Vector& p,
                                    const Vector& du) const {
  const int P = n_params();
  const SparseMatrix A = a.evaluate(mu);
  Vector rhs = Vector::Zero(n_dofs());
  if (kind == SensitivityKind::Primal) {
    for (int i = 0; i < P; ++i) {
      if (direction[i] == 0.0) continue;
      rhs += direction[i] * (l.evaluate_partial(mu, i) - a.apply_partial(mu, i, u));
    }
  } else {
    require(p.size() == n_dofs(), "dual sensitivity requires the dual solution");
    require(du.size() == n_dofs(), "dual sensitivity requires the primal sensitivity");
    for (int i = 0; i < P; ++i) {
      if (direction[i] == 0.0) continue;
      Vector term = Vector::Zero(n_dofs());
      if (!objective.j.components.empty()) term += objective.j.evaluate_partial(mu, i);
      if (!objective.k.components.empty()) term += 2.0 * objective.k.apply_partial(mu, i, u);
      term -= a.apply_partial(mu, i, p);
      rhs += direction[i] * term;
    }
    if (!objective.k.components.empty()) rhs += 2.0 * objective.k.apply(mu, du);
  }
  return direct_solve(A, rhs);
}

Vector FomSystem::hessian_vec(const Vector& mu, const Vector& direction) const {
  const int P = n_params();
  const SparseMatrix A = a.evaluate(mu);
  Eigen::SimplicialLDLT<SparseMatrix> solver(A);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("FomSystem: operator factorization failed");

  const Vector u = solver.solve(l.evaluate(mu));
  const Vector p = solver.solve(objective.state_derivative(mu, u));

  Vector rhs_du = Vector::Zero(n_dofs());
  for (int i = 0; i < P; ++i) {
    if (direction[i] == 0.0) continue;
    rhs_du += direction[i] * (l.evaluate_partial(mu, i) - a.apply_partial(mu, i, u));
  }
  const Vector du = solver.solve(rhs_du);

  Vector rhs_dp = Vector::Zero(n_dofs());
  for (int i = 0; i < P; ++i) {
    if (direction[i] == 0.0) continue;
    Vector term = Vector::Zero(n_dofs());
    if (!objective.j.components.empty()) term += objective.j.evaluate_partial(mu, i);
    if (!objective.k.components.empty()) term += 2.0 * objective.k.apply_partial(mu, i, u);
    term -= a.apply_partial(mu, i, p);
    rhs_dp += direction[i] * term;
  }
  if (!objective.k.components.empty()) rhs_dp += 2.0 * objective.k.apply(mu, du);
  const Vector dp = solver.solve(rhs_dp);

  // (H eta)_i = d/dmu_i [ d_u J(u)[du] + l(dp) - a(du, p) - a(u, dp) ]
  //           + d/dmu_i [ d_mu (J(u, mu) + l(p) - a(u, p)) . eta ]
  Vector out = Vector::Zero(P);
  const bool has_j = !objective.j.components.empty();
  const bool has_k = !objective.k.components.empty();
  for (int i = 0; i < P; ++i) {
    double v = 0.0;
    if (has_j) v += objective.j.evaluate_partial(mu, i).dot(du);
    if (has_k) v += 2.0 * du.dot(objective.k.apply_partial(mu, i, u));
    v += l.evaluate_partial(mu, i).dot(dp);
    v -= p.dot(a.apply_partial(mu, i, du));
    v -= dp.dot(a.apply_partial(mu, i, u));
    out[i] = v;
  }
  // First-order-in-mu terms differentiated again: Theta Hessian plus
  // second partials of the coefficient functionals.
  if (objective.theta_hessian) out += objective.theta_hessian(mu) * direction;
  for (int i = 0; i < P; ++i) {
    double v = 0.0;
    for (int m = 0; m < P; ++m) {
      if (direction[m] == 0.0) continue;
      for (size_t q = 0; q < objective.j.components.size(); ++q)
        v += objective.j.thetas[q].d2(mu, i, m) * direction[m] *
             objective.j.components[q].dot(u);
      for (size_t q = 0; q < objective.k.components.size(); ++q)
        v += objective.k.thetas[q].d2(mu, i, m) * direction[m] *
             u.dot(objective.k.components[q] * u);
      for (size_t q = 0; q < l.components.size(); ++q)
        v += l.thetas[q].d2(mu, i, m) * direction[m] * l.components[q].dot(p);
      for (size_t q = 0; q < a.components.size(); ++q)
        v -= a.thetas[q].d2(mu, i, m) * direction[m] * p.dot(a.components[q] * u);
    }
    out[i] += v;
  }

  return out;
}

FomSolution FomSystem::solve(const Vector& mu) const {
  FomSolution sol;
  sol.mu = mu;
  const SparseMatrix A = a.evaluate(mu);
  Eigen::SimplicialLDLT<SparseMatrix> solver(A);
  if (solver.info() != Eigen::Success)
    throw SingularSystemError("FomSystem: operator factorization failed");
  sol.u = solver.solve(l.evaluate(mu));
  sol.p = solver.solve(objective.state_derivative(mu, sol.u));
  sol.value = objective.value(mu, sol.u);
  sol.gradient = gradient(mu, sol.u, sol.p);
  return sol;
}

Vector FomSystem::riesz(const Vector& functional) const {
  require(product_solver_ != nullptr, "FomSystem: finalize() has not been called");
  return product_solver_->solve(functional);
}

double FomSystem::dual_norm(const Vector& functional) const {
  return std::sqrt(std::max(0.0, functional.dot(riesz(functional))));
}

}  // namespace rbopt
