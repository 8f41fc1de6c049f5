#pragma once

#include <optional>

#include <Eigen/SparseCholesky>

#include "rbopt/fom.hpp"
#include "rbopt/stage1.hpp"

namespace rbopt {

/// Reduced multiscale operator at one parameter: the coarse system matrix
/// assembled from the Stage-1 corrector models, plus the per-element solves.
struct RblodOperator {
  Vector mu;
  SparseMatrix K;
  std::vector<Stage1Solve> locals;
};

RblodOperator build_rblod_operator(const LodSystem& lod,
                                   const std::vector<const Stage1Rom*>& stage1,
                                   const Vector& mu);

Vector rblod_coarse_solve(const RblodOperator& op, const Vector& rhs);

/// Stage-1 coefficients of the reduced corrector of a coarse function.
std::vector<Vector> rblod_correctors(const LodSystem& lod,
                                     const std::vector<const Stage1Rom*>& stage1,
                                     const RblodOperator& op, const Vector& coarse);

/// sum_T rho * || fine residual block ||^2 of the tuple (coarse, correctors).
double rblod_fine_residual2(const LodSystem& lod, const std::vector<const Stage1Rom*>& stage1,
                            const Vector& mu, const Vector& coarse,
                            const std::vector<Vector>& correctors);

/// Two-scale reduced model: residual-minimization (least squares) in the
/// orthonormalized residual coordinates. The dual role carries the
/// parameterized right-hand side components of the adjoint equation.
struct Stage2Rom {
  bool dual = false;
  Matrix basis_coarse;             // N_H x N
  std::vector<Matrix> basis_fine;  // per element: N_T x N
  std::vector<Matrix> Ahat;        // per stiffness component: M x N
  Vector Fhat;                     // primal load coordinates
  std::vector<Vector> Fhat_j;      // dual: per objective-j component
  std::vector<Matrix> Fhat_K;      // dual: per objective-k component, M x N_primal

  Eigen::Index dim() const { return basis_coarse.cols(); }
  Eigen::Index residual_dim() const { return Fhat.size() ? Fhat.size() : (Ahat.empty() ? 0 : Ahat.front().rows()); }
};

struct Stage2Solution {
  Vector coeffs;
  Vector coarse;  // reconstructed coarse part
  double residual_norm = 0.0;
  double eta_a = 0.0;
  bool rank_deficient = false;
  long online_ops = 0;  // operation count of the reduced solve (depends
                        // only on N, M and the number of active components)
};

Stage2Solution stage2_solve(const Stage2Rom& rom, const LodSystem& lod, const Vector& mu,
                            const Vector* primal_coeffs = nullptr);

/// Incremental Stage-2 construction over a frozen Stage-1 set. Snapshot
/// tuples are orthonormalized in the two-scale H1 metric; the residual
/// basis is rebuilt from the current snapshots on every call to `rom()`.
class Stage2Builder {
 public:
  Stage2Builder(const LodSystem& lod, std::vector<const Stage1Rom*> stage1, bool dual,
                const QuadraticObjective* objective = nullptr,
                const Stage2Rom* primal = nullptr);

  /// Adds (coarse, Stage-1 corrector coefficients); false when discarded.
  bool add_tuple(const Vector& coarse, const std::vector<Vector>& fine);
  /// Convenience: reduced solve at mu plus correctors, then add.
  bool add_snapshot(const Vector& mu, const Vector& rhs_coarse);

  Stage2Rom assemble() const;
  Eigen::Index dim() const { return basis_coarse_.cols(); }

 private:
  const LodSystem* lod_;
  std::vector<const Stage1Rom*> stage1_;
  bool dual_ = false;
  const QuadraticObjective* objective_ = nullptr;
  const Stage2Rom* primal_ = nullptr;
  Eigen::SimplicialLDLT<SparseMatrix> s_coarse_;
  Matrix basis_coarse_;
  std::vector<Matrix> basis_fine_;
};

struct Stage2GreedyResult {
  Stage2Rom rom;
  std::vector<double> max_estimates;  // per greedy step
  std::vector<Vector> selected;
  bool converged = false;
  bool duplicate_abort = false;
};

/// Greedy over the training set with approximate (Stage-1 based) snapshots.
/// Selecting a parameter twice signals that the Stage-1 floor was reached;
/// the greedy then aborts with the last valid model.
Stage2GreedyResult stage2_greedy(const LodSystem& lod,
                                 const std::vector<const Stage1Rom*>& stage1,
                                 const std::vector<Vector>& training_set, double tol,
                                 int max_extensions = 50);

// Persistence blobs (self-describing JSON).
void save_stage1_rom(const Stage1Rom& rom, const std::string& path);
Stage1Rom load_stage1_rom(const std::string& path);
void save_stage2_rom(const Stage2Rom& rom, const std::string& path);
Stage2Rom load_stage2_rom(const std::string& path);

}  // namespace rbopt
