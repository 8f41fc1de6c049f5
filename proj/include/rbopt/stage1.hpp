#pragma once

#include <optional>

#include "rbopt/lod.hpp"

namespace rbopt {

/// Reduced corrector model of one coarse element: a single basis for all
/// J_T shape-function right-hand sides, projected affine blocks, the output
/// coupling blocks and the orthonormalized residual data.
struct Stage1Rom {
  int element = 0;
  Matrix basis;               // patch dofs x N_T (patch-H1-orthonormal, in ker I_H)
  std::vector<Matrix> A_red;  // per component: N_T x N_T
  std::vector<Matrix> G_red;  // per component: N_T x J_T
  std::vector<Matrix> K0;     // per component: coarse_rows x J_T
  std::vector<Matrix> Krb;    // per component: coarse_rows x N_T
  std::vector<Matrix> Ahat;   // per component: M_T x N_T
  std::vector<Matrix> Ghat;   // per component: M_T x J_T

  Eigen::Index dim() const { return basis.cols(); }
  Eigen::Index residual_dim() const { return Ahat.empty() ? 0 : Ahat.front().rows(); }

  Matrix reduced_operator(const std::vector<ThetaFunction>& thetas, const Vector& mu) const;
  Matrix reduced_rhs(const std::vector<ThetaFunction>& thetas, const Vector& mu) const;

  /// Residual coordinates (in the orthonormal residual basis) of the
  /// corrector problem for nodal values `lambda` and reduced solution `c`.
  Vector residual_coordinates(const std::vector<ThetaFunction>& thetas, const Vector& mu,
                              const Vector& lambda, const Vector& c) const;
};

/// eta_{T,mu} = alpha^(-1/2) * || residual ||; lambda are the nodal values
/// of the coarse function on the element's shape functions.
double stage1_estimate(const Stage1Rom& rom, const LodSystem& lod, const Vector& mu,
                       const Vector& lambda, const Vector& c);

struct Stage1Solve {
  Matrix coefficients;  // N_T x J_T, one reduced corrector per shape function
  Matrix k_block;       // coarse_rows x J_T (reduced multiscale contribution)
};

Stage1Solve stage1_solve_all(const Stage1Rom& rom, const LodSystem& lod, const Vector& mu);

/// Offline machinery for one element: caches the constrained Riesz solver,
/// extends the basis with exact corrector snapshots and reassembles the
/// projected and residual data.
class Stage1Builder {
 public:
  Stage1Builder(const LodSystem& lod, int element);

  /// Exact corrector snapshot at (mu, shape index); returns false when the
  /// snapshot was discarded (linearly dependent).
  bool extend(const Vector& mu, int shape_index);
  const Stage1Rom& rom() const { return rom_; }
  int n_snapshots_solved() const { return n_snapshots_; }

 private:
  void assemble_blocks();
  int orthonormal_insert(Vector snapshot);

  const LodSystem* lod_;
  const Patch* patch_;
  PatchSolver riesz_;
  SparseMatrix s_patch_;
  std::vector<SparseMatrix> a_patch_;  // per component
  std::vector<Matrix> rhs_columns_;    // per component: patch dofs x J_T
  Stage1Rom rom_;
  int n_snapshots_ = 0;
};

struct Stage1GreedyTraceRow {
  int step = 0;
  Vector selected_mu;
  int selected_shape = 0;
  double max_estimate = 0.0;
};

struct Stage1GreedyResult {
  Stage1Rom rom;
  std::vector<Stage1GreedyTraceRow> trace;
  bool converged = false;
};

/// Weak greedy over (training parameter, shape function) pairs.
Stage1GreedyResult stage1_greedy(const LodSystem& lod, int element,
                                 const std::vector<Vector>& training_set, double tol,
                                 int max_extensions = 200);

}  // namespace rbopt
