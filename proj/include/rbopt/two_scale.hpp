#pragma once

#include <memory>

#include "rbopt/lod.hpp"

namespace rbopt {

/// Element of the two-scale space: coarse coefficients plus one fine-scale
/// coefficient vector per coarse element (patch-interior dofs).
struct TwoScaleVector {
  Vector coarse;
  std::vector<Vector> fine;  // one per coarse element

  static TwoScaleVector zero(const LodSystem& lod);
};

/// Per-patch Riesz solvers for the (mu-independent) H1 patch products, plus
/// the factorized coarse H1 product. Shared by norms and estimators.
class TwoScaleWorkspace {
 public:
  explicit TwoScaleWorkspace(const LodSystem& lod);
  const PatchSolver& patch_riesz(int element) const { return *riesz_[element]; }
  Vector coarse_riesz(const Vector& functional) const;

 private:
  std::vector<std::unique_ptr<PatchSolver>> riesz_;
  Eigen::SimplicialLDLT<SparseMatrix> coarse_product_;
};

/// B_mu(u, v) evaluated element-wise (no global two-scale matrix).
double two_scale_apply(const LodSystem& lod, const Vector& mu, const TwoScaleVector& u,
                       const TwoScaleVector& v);

/// F(v) = l(v_H).
double two_scale_rhs(const LodSystem& lod, const TwoScaleVector& v);

/// Test-space norm: (|v_H|_1^2 + sum_T |v_T|_1^2)^(1/2).
double two_scale_h1_norm(const LodSystem& lod, const TwoScaleVector& u);

struct TwoScaleNorms {
  double a_norm = 0.0;  // ||| . |||_A
  double s_norm = 0.0;  // rho-weighted H1 norm with corrector differences
};

/// Both weighted norms; requires one corrector solve per coarse element.
TwoScaleNorms two_scale_norms(const LodSystem& lod, const Vector& mu, const TwoScaleVector& u);

struct TwoScaleEstimate {
  double eta_a = 0.0;
  double eta_1 = 0.0;
  double residual_dual_norm = 0.0;
};

/// Residual-based error indicators eta_a and eta_1 w.r.t. the two-scale
/// solution; dual norms computed exactly through the workspace.
TwoScaleEstimate two_scale_estimators(const LodSystem& lod, const TwoScaleWorkspace& workspace,
                                      const Vector& mu, const TwoScaleVector& u);

/// PG-LOD solution as a two-scale tuple (coarse solve + per-element
/// correctors of the coarse solution).
TwoScaleVector two_scale_solution(const LodSystem& lod, const Vector& mu,
                                  Vector* coarse_out = nullptr);

/// Correctors of an arbitrary coarse function, one entry per element.
std::vector<Vector> correctors_of(const LodSystem& lod, const Vector& mu,
                                  const Vector& coarse_vector);

}  // namespace rbopt
