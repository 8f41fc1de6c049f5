#pragma once

#include <functional>
#include <memory>

#include <Eigen/SparseCholesky>

#include "rbopt/affine.hpp"
#include "rbopt/grid.hpp"
#include "rbopt/params.hpp"

namespace rbopt {

/// Linear-quadratic objective J(u, mu) = Theta(mu) + j_mu(u) + k_mu(u, u)
/// with symmetric k. The algebraic parts live on the free-dof space of the
/// underlying discretization.
struct QuadraticObjective {
  std::function<double(const Vector&)> theta;
  std::function<Vector(const Vector&)> theta_gradient;
  std::function<Matrix(const Vector&)> theta_hessian;
  AffineFunctional j;
  AffineOperator k;

  double value(const Vector& mu, const Vector& u) const;
  /// d_u J(u, mu)[.] as a dof vector: j_mu + 2 K_mu u.
  Vector state_derivative(const Vector& mu, const Vector& u) const;
  /// mu-gradient of J at fixed u.
  Vector mu_gradient(const Vector& mu, const Vector& u) const;
};

struct FomSolution {
  Vector mu;
  Vector u;
  Vector p;
  double value = 0.0;
  Vector gradient;
};

enum class SensitivityKind { Primal, Dual };

/// Assembled full-order optimization system: affine stiffness and load,
/// quadratic objective, inner products and the parameter box. All solves use
/// a direct sparse factorization; there is no shared mutable state after
/// construction.
class FomSystem {
 public:
  StructuredGrid grid;
  AffineOperator a;
  AffineFunctional l;
  QuadraticObjective objective;
  ParameterBox box;
  Vector mu_bar;             // energy product anchor
  SparseMatrix product;      // a_{mu_bar}
  SparseMatrix h1_seminorm;  // unit-coefficient stiffness
  SparseMatrix l2_mass;

  void finalize();  // assembles products, factors the energy product

  int n_dofs() const { return grid.n_dofs; }
  int n_params() const { return static_cast<int>(box.dim()); }

  Vector solve_primal(const Vector& mu) const;
  Vector solve_dual(const Vector& mu, const Vector& u) const;
  double value(const Vector& mu, const Vector& u) const { return objective.value(mu, u); }

  /// Adjoint gradient: grad_mu J(u, mu) + grad_mu r^pr_mu(u)[p].
  Vector gradient(const Vector& mu, const Vector& u, const Vector& p) const;

  /// Primal and dual residual functionals as dof vectors.
  Vector primal_residual(const Vector& mu, const Vector& u) const;
  Vector dual_residual(const Vector& mu, const Vector& u, const Vector& p) const;

  Vector solve_sensitivity(const Vector& mu, const Vector& direction, SensitivityKind kind,
                           const Vector& u, const Vector& p = Vector(),
                           const Vector& du = Vector()) const;

  /// Hessian of the reduced objective applied to a direction.
  Vector hessian_vec(const Vector& mu, const Vector& direction) const;

  /// Primal + dual + value + gradient with a single factorization.
  FomSolution solve(const Vector& mu) const;

  /// Riesz representative w.r.t. the energy product.
  Vector riesz(const Vector& functional) const;
  double dual_norm(const Vector& functional) const;
  double product_norm(const Vector& v) const { return std::sqrt(v.dot(product * v)); }

 private:
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> product_solver_;
};

}  // namespace rbopt
