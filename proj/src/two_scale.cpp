#include "rbopt/two_scale.hpp"

#include <cmath>

namespace rbopt {

TwoScaleVector TwoScaleVector::zero(const LodSystem& lod) {
  TwoScaleVector out;
  out.coarse = Vector::Zero(lod.n_coarse_dofs());
  out.fine.resize(lod.patches.size());
  for (size_t t = 0; t < lod.patches.size(); ++t)
    out.fine[t] = Vector::Zero(lod.patches[t].n_dofs());
  return out;
}

TwoScaleWorkspace::TwoScaleWorkspace(const LodSystem& lod) {
  riesz_.resize(lod.patches.size());
  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Patch& patch = lod.patches[t];
    riesz_[t] = std::make_unique<PatchSolver>(lod, patch,
                                              lod.patch_submatrix(patch, lod.s_fine));
  }
  coarse_product_.compute(lod.s_coarse);
  require(coarse_product_.info() == Eigen::Success,
          "TwoScaleWorkspace: coarse product factorization failed");
}

Vector TwoScaleWorkspace::coarse_riesz(const Vector& functional) const {
  return coarse_product_.solve(functional);
}

double two_scale_apply(const LodSystem& lod, const Vector& mu, const TwoScaleVector& u,
                       const TwoScaleVector& v) {
  const SparseMatrix A_mu = lod.fine_operator(mu);
  const double sqrt_rho = std::sqrt(lod.constants.rho);

  // a_mu(u_H - sum_T u^f_T, v_H)
  Vector x = lod.prolongation * u.coarse;
  for (size_t t = 0; t < lod.patches.size(); ++t)
    x -= lod.prolong_from_patch(lod.patches[t], u.fine[t]);
  double out = (lod.prolongation * v.coarse).dot(A_mu * x);

  // rho^(1/2) sum_T [ a_mu(u^f_T, v^f_T) - a^T_mu(u_H, v^f_T) ]
  const Vector u_fine_coarse = lod.prolongation * u.coarse;
  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Patch& patch = lod.patches[t];
    const Vector uf = lod.prolong_from_patch(patch, u.fine[t]);
    const Vector vf = lod.prolong_from_patch(patch, v.fine[t]);
    double term = vf.dot(A_mu * uf);
    term -= vf.dot(lod.t_restricted_apply(patch, mu, u_fine_coarse));
    out += sqrt_rho * term;
  }
  return out;
}

double two_scale_rhs(const LodSystem& lod, const TwoScaleVector& v) {
  return lod.l_coarse.dot(v.coarse);
}

double two_scale_h1_norm(const LodSystem& lod, const TwoScaleVector& u) {
  double out = u.coarse.dot(lod.s_coarse * u.coarse);
  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Vector uf = lod.prolong_from_patch(lod.patches[t], u.fine[t]);
    out += uf.dot(lod.s_fine * uf);
  }
  return std::sqrt(std::max(0.0, out));
}

TwoScaleNorms two_scale_norms(const LodSystem& lod, const Vector& mu, const TwoScaleVector& u) {
  const SparseMatrix A_mu = lod.fine_operator(mu);
  const double rho = lod.constants.rho;

  Vector x = lod.prolongation * u.coarse;
  for (size_t t = 0; t < lod.patches.size(); ++t)
    x -= lod.prolong_from_patch(lod.patches[t], u.fine[t]);
  double a2 = x.dot(A_mu * x);
  double s2 = u.coarse.dot(lod.s_coarse * u.coarse);

  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Patch& patch = lod.patches[t];
    const PatchSolver solver(lod, patch, lod.patch_submatrix(patch, A_mu));
    const Vector q = solve_corrector(lod, patch, solver, mu, u.coarse);
    const Vector diff = lod.prolong_from_patch(patch, q - u.fine[t]);
    a2 += rho * diff.dot(A_mu * diff);
    s2 += rho * diff.dot(lod.s_fine * diff);
  }
  TwoScaleNorms norms;
  norms.a_norm = std::sqrt(std::max(0.0, a2));
  norms.s_norm = std::sqrt(std::max(0.0, s2));
  return norms;
}

TwoScaleEstimate two_scale_estimators(const LodSystem& lod, const TwoScaleWorkspace& workspace,
                                      const Vector& mu, const TwoScaleVector& u) {
  const SparseMatrix A_mu = lod.fine_operator(mu);
  const double sqrt_rho = std::sqrt(lod.constants.rho);

  // Coarse residual block: l(v_H) - a_mu(u_H - sum u^f_T, v_H).
  Vector x = lod.prolongation * u.coarse;
  for (size_t t = 0; t < lod.patches.size(); ++t)
    x -= lod.prolong_from_patch(lod.patches[t], u.fine[t]);
  const Vector res_coarse = lod.l_coarse - lod.prolongation.transpose() * (A_mu * x);
  double dual2 = res_coarse.dot(workspace.coarse_riesz(res_coarse));

  // Fine residual blocks: -rho^(1/2) (a_mu(u^f_T, .) - a^T_mu(u_H, .)).
  const Vector u_fine_coarse = lod.prolongation * u.coarse;
  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Patch& patch = lod.patches[t];
    Vector res = lod.restrict_to_patch(
        patch, lod.t_restricted_apply(patch, mu, u_fine_coarse) -
                   A_mu * lod.prolong_from_patch(patch, u.fine[t]));
    res *= sqrt_rho;
    const double norm = workspace.patch_riesz(static_cast<int>(t)).solve_dual_norm(res);
    dual2 += norm * norm;
  }

  TwoScaleEstimate est;
  est.residual_dual_norm = std::sqrt(std::max(0.0, dual2));
  est.eta_a = std::sqrt(5.0) / lod.constants.gamma_kl * est.residual_dual_norm;
  est.eta_1 = lod.constants.C_IH / std::sqrt(lod.constants.alpha) * est.eta_a;
  return est;
}

TwoScaleVector two_scale_solution(const LodSystem& lod, const Vector& mu, Vector* coarse_out) {
  const MultiscaleAssembly assembly = assemble_multiscale_matrix(lod, mu, true);
  const Vector u_H = pglod_solve(assembly.K, lod.l_coarse);
  TwoScaleVector out;
  out.coarse = u_H;
  out.fine.resize(lod.patches.size());
  for (size_t t = 0; t < lod.patches.size(); ++t) {
    const Patch& patch = lod.patches[t];
    // Corrector of u_H from the shape-function correctors (linearity).
    Vector q = Vector::Zero(patch.n_dofs());
    for (int j = 0; j < patch.n_shape(); ++j)
      q += u_H[patch.coarse_basis[j]] * assembly.shape_correctors[t].col(j);
    out.fine[t] = q;
  }
  if (coarse_out) *coarse_out = u_H;
  return out;
}

std::vector<Vector> correctors_of(const LodSystem& lod, const Vector& mu,
                                  const Vector& coarse_vector) {
  const SparseMatrix A_mu = lod.fine_operator(mu);
  std::vector<Vector> out(lod.patches.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int t = 0; t < static_cast<int>(lod.patches.size()); ++t) {
    const Patch& patch = lod.patches[t];
    const PatchSolver solver(lod, patch, lod.patch_submatrix(patch, A_mu));
    out[t] = solve_corrector(lod, patch, solver, mu, coarse_vector);
  }
  return out;
}

}  // namespace rbopt
