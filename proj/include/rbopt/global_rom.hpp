#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rbopt/fom.hpp"
#include "rbopt/rb_space.hpp"

namespace rbopt {

enum class RomVariant { Standard, Ncd, PetrovGalerkin };

enum class GradientMode { Inexact, NcdAdjoint, NcdSensitivity, Pg };

enum class EstimatorQuantity {
  Primal,
  Dual,
  Functional,            // standard (first-order) bound
  FunctionalNcd,         // higher-order bound for the corrected functional
  GradientStandard,
  GradientNcdAdjoint,
  GradientNcdSens,
  PgPrimal,
  PgDual,
  PgFunctional,
};

struct RomSolution {
  Vector mu;
  Vector u;  // reduced primal coefficients
  Vector p;  // reduced dual coefficients
  Vector z;  // NCD auxiliary (dual space)
  Vector w;  // NCD auxiliary (primal space)
  double value = 0.0;
};

/// Offline data for one affinely decomposed residual functional: either the
/// Gram matrix of the Riesz representatives (classic) or the coefficients of
/// the representatives in an orthonormalized residual basis (stable).
struct ResidualFamily {
  bool stable = true;
  Matrix gram;        // n_comp x n_comp (classic)
  Matrix onb_coeffs;  // M x n_comp (stable)

  double norm(const Vector& coeffs) const;
};

/// Projected model of the optimality system on a primal/dual RB space pair,
/// with precomputed residual data for the a posteriori estimators.
class GlobalRom {
 public:
  const FomSystem* fom = nullptr;
  RomVariant variant = RomVariant::Ncd;
  bool stable = true;
  bool estimators_built = false;

  RbSpace v_pr, v_du;

  // Projected affine components (one entry per affine component).
  std::vector<Matrix> A_pp, A_dd, A_dp;  // stiffness on (pr,pr), (du,du), (du x pr)
  std::vector<Vector> l_pr, l_du;
  std::vector<Vector> j_pr, j_du;
  std::vector<Matrix> K_pp, K_dd, K_dp;

  // Residual families: primal residual components [l_q] + [A_q psi^pr_n];
  // dual residual components [j_q] + [K_q psi^pr_n] + [A_q psi^du_m].
  ResidualFamily res_pr, res_du;

  // Constants for the estimator formulas.
  double k_base_norm = 0.0;              // ||k_{mu_bar}|| w.r.t. the energy product
  std::vector<double> l_comp_dual_norms;
  std::vector<double> j_comp_dual_norms;

  Eigen::Index dim_pr() const { return v_pr.dim(); }
  Eigen::Index dim_du() const { return v_du.dim(); }

  double coercivity_lb(const Vector& mu) const;
  double continuity_a(const Vector& mu) const;
  double continuity_da(const Vector& mu, int i) const;
  double continuity_k(const Vector& mu) const;
  double continuity_dk(const Vector& mu, int i) const;
  double dual_norm_dl(const Vector& mu, int i) const;
  double dual_norm_dj(const Vector& mu, int i) const;

  // Assembled reduced operators at mu.
  Matrix reduced_App(const Vector& mu) const;
  Matrix reduced_Add(const Vector& mu) const;
  Matrix reduced_Adp(const Vector& mu) const;
  Matrix reduced_Kpp(const Vector& mu) const;
  Matrix reduced_Kdp(const Vector& mu) const;
  Vector reduced_lpr(const Vector& mu) const;
  Vector reduced_ldu(const Vector& mu) const;
  Vector reduced_jpr(const Vector& mu) const;
  Vector reduced_jdu(const Vector& mu) const;

  // Dual norms of the (sensitivity) residual functionals, evaluated through
  // the precomputed families. coeff_* hold the scalar weights per component.
  double primal_family_norm(const Vector& coeff_l, const Matrix& coeff_Au) const;
  double dual_family_norm(const Vector& coeff_j, const Matrix& coeff_Ku,
                          const Matrix& coeff_Ap) const;

  double primal_residual_norm(const Vector& mu, const Vector& u) const;
  double dual_residual_norm(const Vector& mu, const Vector& u, const Vector& p) const;

  // Reduced sensitivities in the respective RB spaces (direction eta).
  Vector primal_sensitivity(const Vector& mu, const RomSolution& sol, const Vector& eta) const;
  Vector dual_sensitivity(const Vector& mu, const RomSolution& sol, const Vector& eta,
                          const Vector& du) const;

  // NCD correction term r^pr_mu(u_r)[p_r] from reduced data.
  double correction_term(const Vector& mu, const Vector& u, const Vector& p) const;
};

/// Builds all projected components; `build_estimators=false` skips the
/// residual Riesz work (relaxed driver); call `build_estimator_data` later.
GlobalRom build_rom(const FomSystem& fom, const RbSpace& v_pr, const RbSpace& v_du,
                    RomVariant variant, bool stable = true, bool build_estimators = true);

void build_estimator_data(GlobalRom& rom);

RomSolution rom_solve(const GlobalRom& rom, const Vector& mu);

double rom_functional(const GlobalRom& rom, const RomSolution& sol);

Vector rom_gradient(const GlobalRom& rom, const RomSolution& sol, GradientMode mode);

Vector rom_hessian_vec(const GlobalRom& rom, const RomSolution& sol, const Vector& eta);

double estimate(const GlobalRom& rom, const RomSolution& sol, EstimatorQuantity quantity);

/// Componentwise gradient bounds (the scalar estimate is their 2-norm).
Vector estimate_gradient(const GlobalRom& rom, const RomSolution& sol, EstimatorQuantity which);

struct ParameterEstimate {
  bool second_order_verified = false;
  double value = 0.0;
  double lambda_min = 0.0;
};

/// Delta_mu = (2 / lambda_min) ||zeta||_2 with the clipped FOM gradient zeta.
/// FOM cost: assembles the FOM Hessian column by column.
ParameterEstimate parameter_estimate(const FomSystem& fom, const Vector& mu,
                                     const Vector& fom_gradient);

struct GreedyStep {
  Vector selected_mu;
  double max_estimate = 0.0;
};

struct GreedyResult {
  std::vector<GreedyStep> steps;
  bool converged = false;
};

/// Goal-oriented weak greedy: enriches (Lagrange) at the training parameter
/// maximizing the functional estimator until `tol` or `max_extensions`.
GreedyResult goal_oriented_greedy(const FomSystem& fom, RbSpace& v_pr, RbSpace& v_du,
                                  const std::vector<Vector>& training_set, int max_extensions,
                                  double tol, RomVariant variant = RomVariant::Ncd,
                                  bool stable = true);

void save_rom(const GlobalRom& rom, const std::string& path);
GlobalRom load_rom(const FomSystem& fom, const std::string& path);

}  // namespace rbopt
