#include "rbopt/lod.hpp"

#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rbopt {

namespace {

// Q1 shape value on the unit square, corners (0,0),(1,0),(1,1),(0,1).
double shape(int i, double x, double y) {
  switch (i) {
    case 0: return (1 - x) * (1 - y);
    case 1: return x * (1 - y);
    case 2: return x * y;
    default: return (1 - x) * y;
  }
}

// Local L2 projection onto Q1 per coarse element followed by nodal
// averaging over the adjacent elements.
SparseMatrix build_interpolation(const StructuredGrid& fine, const StructuredGrid& coarse) {
  const int m = fine.n / coarse.n;
  const double h = fine.h();
  const double H = coarse.h();

  Eigen::Matrix4d M_ref;
  M_ref << 4, 2, 1, 2, 2, 4, 2, 1, 1, 2, 4, 2, 2, 1, 2, 4;
  const Eigen::Matrix4d M_T = (H * H / 36.0) * M_ref;
  const Eigen::Matrix4d M_inv = M_T.inverse();

  // Mixed mass on one fine cell at local offset (cx, cy) inside the coarse
  // element: rows coarse corners, cols fine corners.
  const double off = 0.5 / std::sqrt(3.0);
  auto mixed_cell = [&](int cx, int cy) {
    Eigen::Matrix4d W = Eigen::Matrix4d::Zero();
    for (int gy = 0; gy < 2; ++gy)
      for (int gx = 0; gx < 2; ++gx) {
        const double fx = 0.5 + (gx == 0 ? -off : off);
        const double fy = 0.5 + (gy == 0 ? -off : off);
        const double X = (cx + fx) / m, Y = (cy + fy) / m;  // coarse local coords
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j)
            W(i, j) += 0.25 * h * h * shape(i, X, Y) * shape(j, fx, fy);
      }
    return W;
  };
  std::vector<Eigen::Matrix4d> mixed(m * m);
  for (int cy = 0; cy < m; ++cy)
    for (int cx = 0; cx < m; ++cx) mixed[cy * m + cx] = mixed_cell(cx, cy);

  std::vector<Eigen::Triplet<double>> triplets;
  for (int e = 0; e < coarse.n_elements(); ++e) {
    const int ex = e % coarse.n, ey = e / coarse.n;
    const auto corners = coarse.element_vertices(e);
    for (int cy = 0; cy < m; ++cy)
      for (int cx = 0; cx < m; ++cx) {
        const int fe = (ey * m + cy) * fine.n + (ex * m + cx);
        const auto fverts = fine.element_vertices(fe);
        const Eigen::Matrix4d P = M_inv * mixed[cy * m + cx];
        for (int i = 0; i < 4; ++i) {
          const int cd = coarse.dof_map[corners[i]];
          if (cd < 0) continue;
          for (int j = 0; j < 4; ++j) {
            const int fd = fine.dof_map[fverts[j]];
            if (fd < 0) continue;
            // Nodal averaging: every free coarse node is interior and thus
            // adjacent to exactly four coarse elements.
            triplets.emplace_back(cd, fd, 0.25 * P(i, j));
          }
        }
      }
  }
  SparseMatrix I_H(coarse.n_dofs, fine.n_dofs);
  I_H.setFromTriplets(triplets.begin(), triplets.end());
  // Cancellation leaves O(1e-17) residue in analytically-zero entries; they
  // would defeat the zero-row detection of the patch constraints.
  double max_abs = 0.0;
  for (int k = 0; k < I_H.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(I_H, k); it; ++it)
      max_abs = std::max(max_abs, std::abs(it.value()));
  I_H.prune(max_abs, 1e-12);
  I_H.makeCompressed();
  return I_H;
}

SparseMatrix build_prolongation(const StructuredGrid& fine, const StructuredGrid& coarse) {
  const int m = fine.n / coarse.n;
  std::vector<Eigen::Triplet<double>> triplets;
  for (int v = 0; v < fine.n_vertices(); ++v) {
    const int fd = fine.dof_map[v];
    if (fd < 0) continue;
    const int ix = v % (fine.n + 1), iy = v / (fine.n + 1);
    const int cex = std::min(ix / m, coarse.n - 1);
    const int cey = std::min(iy / m, coarse.n - 1);
    const double lx = static_cast<double>(ix - cex * m) / m;
    const double ly = static_cast<double>(iy - cey * m) / m;
    const auto corners = coarse.element_vertices(cey * coarse.n + cex);
    for (int i = 0; i < 4; ++i) {
      const int cd = coarse.dof_map[corners[i]];
      if (cd < 0) continue;
      const double w = shape(i, lx, ly);
      if (w != 0.0) triplets.emplace_back(fd, cd, w);
    }
  }
  SparseMatrix P(fine.n_dofs, coarse.n_dofs);
  P.setFromTriplets(triplets.begin(), triplets.end());
  P.makeCompressed();
  return P;
}

}  // namespace

SparseMatrix LodSystem::coarse_operator(const Vector& mu) const {
  SparseMatrix out = thetas[0](mu) * a_coarse[0];
  for (size_t q = 1; q < a_coarse.size(); ++q) out += thetas[q](mu) * a_coarse[q];
  return out;
}

SparseMatrix LodSystem::patch_submatrix(const Patch& patch,
                                        const SparseMatrix& fine_matrix) const {
  std::vector<int> local(fine.n_dofs, -1);
  for (int i = 0; i < patch.n_dofs(); ++i) local[patch.fine_dofs[i]] = i;
  std::vector<Eigen::Triplet<double>> triplets;
  for (int j = 0; j < patch.n_dofs(); ++j) {
    const int gj = patch.fine_dofs[j];
    for (SparseMatrix::InnerIterator it(fine_matrix, gj); it; ++it) {
      const int li = local[static_cast<int>(it.row())];
      if (li >= 0) triplets.emplace_back(li, j, it.value());
    }
  }
  SparseMatrix out(patch.n_dofs(), patch.n_dofs());
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

SparseMatrix LodSystem::patch_constraints(const Patch& patch) const {
  std::vector<int> local(fine.n_dofs, -1);
  for (int i = 0; i < patch.n_dofs(); ++i) local[patch.fine_dofs[i]] = i;
  std::vector<Eigen::Triplet<double>> triplets;
  const Eigen::SparseMatrix<double, Eigen::RowMajor> rows(interpolation);
  int kept = 0;
  for (const int row : patch.constraint_rows) {
    bool nonzero = false;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows, row); it; ++it) {
      const int li = local[static_cast<int>(it.col())];
      if (li >= 0) {
        triplets.emplace_back(kept, li, it.value());
        nonzero = true;
      }
    }
    if (nonzero) ++kept;  // rows without support on the patch are dropped
  }
  SparseMatrix C(kept, patch.n_dofs());
  C.setFromTriplets(triplets.begin(), triplets.end());
  C.makeCompressed();
  return C;
}

Vector LodSystem::restrict_to_patch(const Patch& patch, const Vector& fine_vector) const {
  Vector out(patch.n_dofs());
  for (int i = 0; i < patch.n_dofs(); ++i) out[i] = fine_vector[patch.fine_dofs[i]];
  return out;
}

Vector LodSystem::prolong_from_patch(const Patch& patch, const Vector& patch_vector) const {
  Vector out = Vector::Zero(fine.n_dofs);
  for (int i = 0; i < patch.n_dofs(); ++i) out[patch.fine_dofs[i]] = patch_vector[i];
  return out;
}

Vector LodSystem::t_restricted_apply(const Patch& patch, int component,
                                     const Vector& fine_vector) const {
  return apply_restricted(fine, fields[static_cast<size_t>(component)],
                          ComponentKind::Diffusion, patch.t_cells, fine_vector);
}

Vector LodSystem::t_restricted_apply(const Patch& patch, const Vector& mu,
                                     const Vector& fine_vector) const {
  Vector out = Vector::Zero(fine.n_dofs);
  for (size_t q = 0; q < fields.size(); ++q) {
    const double t = thetas[q](mu);
    if (t != 0.0) out += t * t_restricted_apply(patch, static_cast<int>(q), fine_vector);
  }
  return out;
}

LodSystem build_lod_system(const LodConfig& config,
                           const std::vector<PiecewiseConstantField>& fields,
                           const std::vector<ThetaFunction>& thetas,
                           const PiecewiseConstantField& rhs_field,
                           const std::vector<Vector>& training_set) {
  require(config.n_h % config.n_H == 0, "build_lod_system: n_H must divide n_h");
  require(fields.size() == thetas.size(), "build_lod_system: field/theta mismatch");
  LodSystem lod;
  lod.fine = build_grid(config.n_h);
  lod.coarse = build_grid(config.n_H);
  lod.ell = config.ell > 0
                ? config.ell
                : static_cast<int>(std::floor(std::log(static_cast<double>(config.n_H)))) + 1;
  lod.fields = fields;
  lod.thetas = thetas;

  for (const auto& field : fields)
    lod.a_fine.components.push_back(assemble_matrix(lod.fine, field, ComponentKind::Diffusion));
  lod.a_fine.thetas = thetas;
  lod.a_fine.psd_components = true;
  lod.l_fine = assemble_rhs(lod.fine, rhs_field);

  lod.interpolation = build_interpolation(lod.fine, lod.coarse);
  lod.prolongation = build_prolongation(lod.fine, lod.coarse);
  lod.s_fine =
      assemble_matrix(lod.fine, PiecewiseConstantField::constant(1.0), ComponentKind::Diffusion);
  lod.s_coarse = assemble_matrix(lod.coarse, PiecewiseConstantField::constant(1.0),
                                 ComponentKind::Diffusion);
  lod.m_coarse =
      assemble_matrix(lod.coarse, PiecewiseConstantField::constant(1.0), ComponentKind::L2);
  for (const auto& A : lod.a_fine.components)
    lod.a_coarse.push_back(
        SparseMatrix(lod.prolongation.transpose() * (A * lod.prolongation)));
  lod.l_coarse = lod.prolongation.transpose() * lod.l_fine;

  // Coefficient bounds over the training set on the common data refinement.
  int R = 1;
  for (const auto& field : fields) R = std::lcm(R, field.resolution);
  double alpha = std::numeric_limits<double>::infinity();
  double beta = -alpha;
  require(!training_set.empty(), "build_lod_system: empty training set for the constants");
  for (const auto& mu : training_set) {
    for (int cy = 0; cy < R; ++cy)
      for (int cx = 0; cx < R; ++cx) {
        const double x = (cx + 0.5) / R, y = (cy + 0.5) / R;
        double v = 0.0;
        for (size_t q = 0; q < fields.size(); ++q) v += thetas[q](mu) * fields[q].at(x, y);
        alpha = std::min(alpha, v);
        beta = std::max(beta, v);
      }
  }
  require(alpha > 0.0,
          "build_lod_system: coefficient not uniformly positive on the training set");
  lod.constants.alpha = alpha;
  lod.constants.beta = beta;
  lod.constants.kappa = beta / alpha;
  lod.constants.C_ovl = std::pow(2.0 * lod.ell + 1.0, 2);
  lod.constants.rho = lod.constants.C_ovl * lod.constants.kappa;
  lod.constants.C_IH = config.C_IH;
  lod.constants.gamma_kl = std::sqrt(alpha) / config.C_IH;

  const int n_H = config.n_H;
  const int m = config.n_h / config.n_H;
  for (int e = 0; e < lod.coarse.n_elements(); ++e) {
    Patch patch;
    patch.element = e;
    const int ex = e % n_H, ey = e / n_H;
    const int x0 = std::max(0, ex - lod.ell), x1 = std::min(n_H - 1, ex + lod.ell);
    const int y0 = std::max(0, ey - lod.ell), y1 = std::min(n_H - 1, ey + lod.ell);
    for (int cy = y0; cy <= y1; ++cy)
      for (int cx = x0; cx <= x1; ++cx) patch.coarse_elements.push_back(cy * n_H + cx);
    for (int cy = y0 * m; cy < (y1 + 1) * m; ++cy)
      for (int cx = x0 * m; cx < (x1 + 1) * m; ++cx)
        patch.fine_cells.push_back(cy * config.n_h + cx);
    for (int cy = ey * m; cy < (ey + 1) * m; ++cy)
      for (int cx = ex * m; cx < (ex + 1) * m; ++cx)
        patch.t_cells.push_back(cy * config.n_h + cx);
    for (int iy = y0 * m + 1; iy <= (y1 + 1) * m - 1; ++iy)
      for (int ix = x0 * m + 1; ix <= (x1 + 1) * m - 1; ++ix) {
        const int fd = lod.fine.dof_map[lod.fine.vertex(ix, iy)];
        if (fd >= 0) patch.fine_dofs.push_back(fd);
      }
    for (int corner : lod.coarse.element_vertices(e)) {
      const int cd = lod.coarse.dof_map[corner];
      if (cd >= 0) patch.coarse_basis.push_back(cd);
    }
    for (int ny = std::max(1, y0); ny <= std::min(n_H - 1, y1 + 1); ++ny)
      for (int nx = std::max(1, x0); nx <= std::min(n_H - 1, x1 + 1); ++nx) {
        const int cd = lod.coarse.dof_map[lod.coarse.vertex(nx, ny)];
        if (cd >= 0) patch.coarse_rows.push_back(cd);
      }
    patch.constraint_rows = patch.coarse_rows;
    lod.patches.push_back(std::move(patch));
  }
  return lod;
}

PatchSolver::PatchSolver(const LodSystem& lod, const Patch& patch,
                         const SparseMatrix& patch_matrix)
    : A_(patch_matrix), C_(lod.patch_constraints(patch)) {
  n_dofs_ = patch.n_dofs();
  n_constraints_ = static_cast<int>(C_.rows());
  a_solver_.compute(A_);
  if (a_solver_.info() != Eigen::Success)
    throw SingularSystemError("PatchSolver: patch operator factorization failed");
  W_ = a_solver_.solve(Matrix(C_.transpose()));
  const Matrix schur = C_ * W_;
  schur_.compute(schur);
  if (schur_.info() != Eigen::Success)
    throw SingularSystemError("PatchSolver: constraint Schur complement is singular");
}

Vector PatchSolver::solve_once(const Vector& rhs, Vector* multipliers) const {
  const Vector x0 = a_solver_.solve(rhs);
  const Vector lambda = schur_.solve(C_ * x0);
  if (multipliers) *multipliers = lambda;
  return x0 - W_ * lambda;
}

Vector PatchSolver::solve(const Vector& rhs) const {
  Vector lambda;
  Vector x = solve_once(rhs, &lambda);
  // One refinement step on the full saddle residual.
  const Vector r = rhs - A_ * x - C_.transpose() * lambda;
  x += solve_once(r, nullptr);
  // Re-project onto the constraint manifold.
  x -= W_ * schur_.solve(C_ * x);
  return x;
}

double PatchSolver::solve_dual_norm(const Vector& functional) const {
  const Vector riesz = solve(functional);
  return std::sqrt(std::max(0.0, functional.dot(riesz)));
}

Vector solve_corrector(const LodSystem& lod, const Patch& patch, const PatchSolver& solver,
                       const Vector& mu, const Vector& coarse_vector) {
  const Vector fine = lod.prolongation * coarse_vector;
  const Vector rhs = lod.restrict_to_patch(patch, lod.t_restricted_apply(patch, mu, fine));
  return solver.solve(rhs);
}

MultiscaleAssembly assemble_multiscale_matrix(const LodSystem& lod, const Vector& mu,
                                              bool keep_correctors) {
  MultiscaleAssembly out;
  const SparseMatrix A_mu = lod.fine_operator(mu);
  const int n_patches = static_cast<int>(lod.patches.size());
  out.element_blocks.resize(n_patches);
  if (keep_correctors) out.shape_correctors.resize(n_patches);
  std::vector<std::vector<Eigen::Triplet<double>>> triplets(n_patches);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int t = 0; t < n_patches; ++t) {
    const Patch& patch = lod.patches[t];
    const PatchSolver solver(lod, patch, lod.patch_submatrix(patch, A_mu));
    const int J = patch.n_shape();
    Matrix block(static_cast<Eigen::Index>(patch.coarse_rows.size()), J);
    Matrix correctors(patch.n_dofs(), J);
    for (int j = 0; j < J; ++j) {
      Vector e = Vector::Zero(lod.n_coarse_dofs());
      e[patch.coarse_basis[j]] = 1.0;
      const Vector fine_basis = lod.prolongation * e;
      const Vector t_apply = lod.t_restricted_apply(patch, mu, fine_basis);
      const Vector q = solver.solve(lod.restrict_to_patch(patch, t_apply));
      correctors.col(j) = q;
      const Vector column =
          lod.prolongation.transpose() * (t_apply - A_mu * lod.prolong_from_patch(patch, q));
      for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
        block(static_cast<Eigen::Index>(r), j) = column[patch.coarse_rows[r]];
    }
    out.element_blocks[t] = block;
    if (keep_correctors) out.shape_correctors[t] = std::move(correctors);
    auto& local = triplets[t];
    for (int j = 0; j < J; ++j)
      for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
        local.emplace_back(patch.coarse_rows[r], patch.coarse_basis[j],
                           block(static_cast<Eigen::Index>(r), j));
  }

  // Deterministic reduction: patch contributions merged in element order.
  std::vector<Eigen::Triplet<double>> all;
  for (auto& local : triplets) all.insert(all.end(), local.begin(), local.end());
  SparseMatrix K(lod.n_coarse_dofs(), lod.n_coarse_dofs());
  K.setFromTriplets(all.begin(), all.end());
  K.makeCompressed();
  out.K = K;
  return out;
}

Vector pglod_solve(const SparseMatrix& K, const Vector& rhs) {
  Eigen::SparseLU<SparseMatrix> lu(K);
  if (lu.info() != Eigen::Success)
    throw SingularSystemError("pglod_solve: multiscale matrix is singular");
  Vector sol = lu.solve(rhs);
  sol += lu.solve(rhs - K * sol);
  return sol;
}

LodSolution lod_objective_and_gradient(const LodSystem& lod, const LodObjective& objective,
                                       const Vector& mu, const MultiscaleAssembly* assembly,
                                       bool exact_adjoint) {
  LodSolution sol;
  sol.mu = mu;
  MultiscaleAssembly local;
  if (!assembly) {
    local = assemble_multiscale_matrix(lod, mu);
    assembly = &local;
  }
  Eigen::SparseLU<SparseMatrix> lu(assembly->K);
  if (lu.info() != Eigen::Success)
    throw SingularSystemError("lod_objective_and_gradient: multiscale matrix is singular");
  sol.u = lu.solve(lod.l_coarse);
  sol.value = objective.coarse.value(mu, sol.u);
  const int P = static_cast<int>(mu.size());

  if (!exact_adjoint) {
    sol.p = lu.solve(objective.coarse.state_derivative(mu, sol.u));
    sol.gradient = objective.coarse.mu_gradient(mu, sol.u);
    for (int i = 0; i < P; ++i) {
      // d_mu r^pr(u)[p] with coarse representatives; l is non-parametric here.
      for (size_t q = 0; q < lod.a_coarse.size(); ++q) {
        const double t = lod.thetas[q].d(mu, i);
        if (t != 0.0) sol.gradient[i] -= t * sol.p.dot(lod.a_coarse[q] * sol.u);
      }
    }
    return sol;
  }

  // Two-scale adjoint: K^T p plus per-element corrector terms. The fine
  // component of the adjoint tuple is the a_mu-projection of p_H onto the
  // patch kernel space (full patch form, not the T-restricted one).
  const SparseMatrix Kt = SparseMatrix(assembly->K.transpose());
  Eigen::SparseLU<SparseMatrix> lut(Kt);
  if (lut.info() != Eigen::Success)
    throw SingularSystemError("lod_objective_and_gradient: transposed multiscale matrix");
  sol.p = lut.solve(objective.coarse.state_derivative(mu, sol.u));

  const SparseMatrix A_mu = lod.fine_operator(mu);
  const Vector u_fine = lod.prolongation * sol.u;
  const Vector p_fine = lod.prolongation * sol.p;

  Vector ms = u_fine;  // u_H - sum_T Q^T(u_H)
  std::vector<Vector> q_primal(lod.patches.size()), q_dual(lod.patches.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int t = 0; t < static_cast<int>(lod.patches.size()); ++t) {
    const Patch& patch = lod.patches[t];
    const PatchSolver solver(lod, patch, lod.patch_submatrix(patch, A_mu));
    q_primal[t] = solve_corrector(lod, patch, solver, mu, sol.u);
    q_dual[t] = solver.solve(lod.restrict_to_patch(patch, A_mu * p_fine));
  }
  for (size_t t = 0; t < lod.patches.size(); ++t)
    ms -= lod.prolong_from_patch(lod.patches[t], q_primal[t]);

  sol.gradient = objective.coarse.mu_gradient(mu, sol.u);
  for (int i = 0; i < P; ++i) {
    for (size_t q = 0; q < lod.a_fine.components.size(); ++q) {
      const double t = lod.thetas[q].d(mu, i);
      if (t == 0.0) continue;
      double v = p_fine.dot(lod.a_fine.components[q] * ms);
      for (size_t tt = 0; tt < lod.patches.size(); ++tt) {
        const Patch& patch = lod.patches[tt];
        const Vector qp = lod.prolong_from_patch(patch, q_primal[tt]);
        const Vector qd = lod.prolong_from_patch(patch, q_dual[tt]);
        v += qd.dot(lod.a_fine.components[q] * qp);
        v -= qd.dot(apply_restricted(lod.fine, lod.fields[q], ComponentKind::Diffusion,
                                     patch.t_cells, u_fine));
      }
      sol.gradient[i] -= t * v;
    }
  }
  return sol;
}

}  // namespace rbopt
