#pragma once

#include <memory>
#include <vector>

#include <Eigen/SparseLU>

#include "rbopt/affine.hpp"
#include "rbopt/assembly.hpp"
#include "rbopt/field.hpp"
#include "rbopt/fom.hpp"
#include "rbopt/grid.hpp"

namespace rbopt {

struct TwoScaleConstants {
  double alpha = 1.0;     // coefficient lower bound over the training set
  double beta = 1.0;      // coefficient upper bound
  double kappa = 1.0;     // contrast beta/alpha
  double C_ovl = 1.0;     // (2 ell + 1)^2 on quadrilaterals
  double rho = 1.0;       // C_ovl * kappa
  double C_IH = 1.0;      // interpolation stability constant (configured)
  double gamma_kl = 1.0;  // inf-sup approximation alpha^(1/2) / C_IH
};

/// Oversampling patch U_ell(T) of one coarse element.
struct Patch {
  int element = 0;  // coarse element index T
  std::vector<int> coarse_elements;  // elements of U_ell(T)
  std::vector<int> fine_cells;       // fine cells covered by the patch
  std::vector<int> t_cells;          // fine cells of T itself
  std::vector<int> fine_dofs;        // free fine dofs interior to the patch
  std::vector<int> coarse_basis;     // J_T coarse dofs whose support meets T
  std::vector<int> constraint_rows;  // coarse dofs with interpolation support on the patch
  std::vector<int> coarse_rows;      // coarse dofs whose support meets the patch

  int n_dofs() const { return static_cast<int>(fine_dofs.size()); }
  int n_shape() const { return static_cast<int>(coarse_basis.size()); }
};

/// Fine/coarse grid pair with the quasi-interpolation operator, patches and
/// all parameter-separable data needed by the PG-LOD and its reductions.
class LodSystem {
 public:
  StructuredGrid fine;
  StructuredGrid coarse;
  int ell = 1;
  TwoScaleConstants constants;

  std::vector<PiecewiseConstantField> fields;  // one per affine component
  std::vector<ThetaFunction> thetas;
  AffineOperator a_fine;                 // assembled fine components
  std::vector<SparseMatrix> a_coarse;    // P_c^T A_q P_c
  Vector l_fine;                         // non-parametric load
  Vector l_coarse;

  SparseMatrix interpolation;  // I_H: fine dofs -> coarse dofs
  SparseMatrix prolongation;   // P_c: coarse dofs -> fine dofs
  SparseMatrix s_fine;         // fine H1 seminorm
  SparseMatrix s_coarse;       // coarse H1 seminorm
  SparseMatrix m_coarse;       // coarse L2 mass

  std::vector<Patch> patches;

  int n_coarse_dofs() const { return coarse.n_dofs; }
  int n_fine_dofs() const { return fine.n_dofs; }
  int n_elements() const { return coarse.n_elements(); }

  SparseMatrix fine_operator(const Vector& mu) const { return a_fine.evaluate(mu); }
  SparseMatrix coarse_operator(const Vector& mu) const;

  /// Extracts the patch-interior submatrix of a fine-dof sparse matrix.
  SparseMatrix patch_submatrix(const Patch& patch, const SparseMatrix& fine_matrix) const;
  /// Interpolation rows restricted to patch columns (kernel constraints).
  SparseMatrix patch_constraints(const Patch& patch) const;
  Vector restrict_to_patch(const Patch& patch, const Vector& fine_vector) const;
  Vector prolong_from_patch(const Patch& patch, const Vector& patch_vector) const;

  /// A^T_q applied to a fine vector: assembly restricted to the cells of T.
  Vector t_restricted_apply(const Patch& patch, int component, const Vector& fine_vector) const;
  Vector t_restricted_apply(const Patch& patch, const Vector& mu,
                            const Vector& fine_vector) const;
};

struct LodConfig {
  int n_h = 32;
  int n_H = 4;
  int ell = -1;  // < 0: first integer exceeding |log H|
  double C_IH = 1.0;
};

LodSystem build_lod_system(const LodConfig& config,
                           const std::vector<PiecewiseConstantField>& fields,
                           const std::vector<ThetaFunction>& thetas,
                           const PiecewiseConstantField& rhs_field,
                           const std::vector<Vector>& training_set);

/// Saddle-point solver [A C^T; C 0] for corrector problems (or Riesz
/// problems when built with the H1 product). A is factored with a sparse
/// Cholesky and the interpolation constraints are eliminated through the
/// dense multiplier Schur complement; the near-dense constraint rows would
/// otherwise ruin the sparse elimination.
class PatchSolver {
 public:
  PatchSolver(const LodSystem& lod, const Patch& patch, const SparseMatrix& patch_matrix);
  /// Solves for the patch function with the given right-hand side; the
  /// kernel constraint I_H(q) = 0 is enforced through multipliers.
  Vector solve(const Vector& rhs) const;
  double solve_dual_norm(const Vector& functional) const;  // sqrt(f . riesz(f))

 private:
  Vector solve_once(const Vector& rhs, Vector* multipliers) const;

  int n_dofs_ = 0;
  int n_constraints_ = 0;
  SparseMatrix A_;
  SparseMatrix C_;
  Matrix W_;  // A^{-1} C^T
  Eigen::SimplicialLDLT<SparseMatrix> a_solver_;
  Eigen::LDLT<Matrix> schur_;
};

/// Corrector Q^T_{ell,mu}(v_H) for a coarse function given by its dof vector.
Vector solve_corrector(const LodSystem& lod, const Patch& patch, const PatchSolver& solver,
                       const Vector& mu, const Vector& coarse_vector);

/// Per-element multiscale contributions and their sum K_mu. The correctors
/// of the J_T shape functions are returned per element when requested.
struct MultiscaleAssembly {
  SparseMatrix K;                       // N_H x N_H
  std::vector<Matrix> element_blocks;   // per T: coarse_rows x J_T
  std::vector<Matrix> shape_correctors; // per T: patch dofs x J_T
};

MultiscaleAssembly assemble_multiscale_matrix(const LodSystem& lod, const Vector& mu,
                                              bool keep_correctors = false);

Vector pglod_solve(const SparseMatrix& K, const Vector& rhs);

struct LodSolution {
  Vector mu;
  Vector u;  // coarse primal
  Vector p;  // coarse dual
  double value = 0.0;
  Vector gradient;
};

/// Coarse quadratic objective (Assumption: J only sees the coarse part).
struct LodObjective {
  QuadraticObjective coarse;  // algebra on the coarse dof space
};

/// Primal and dual PG-LOD solves plus objective value and adjoint gradient.
/// The default gradient plugs the coarse representatives into the full-order
/// adjoint formula; it drops the corrector sensitivities and is therefore
/// only an approximation of the derivative of the localized functional.
/// `exact_adjoint` instead solves the two-scale adjoint (transposed
/// multiscale matrix plus one extra corrector solve per element) and matches
/// finite differences to solver precision.
LodSolution lod_objective_and_gradient(const LodSystem& lod, const LodObjective& objective,
                                       const Vector& mu,
                                       const MultiscaleAssembly* assembly = nullptr,
                                       bool exact_adjoint = false);

}  // namespace rbopt
