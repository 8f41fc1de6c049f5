#include "rbopt/stage1.hpp"

#include <cmath>

namespace rbopt {

Matrix Stage1Rom::reduced_operator(const std::vector<ThetaFunction>& thetas,
                                   const Vector& mu) const {
  Matrix out = thetas[0](mu) * A_red[0];
  for (size_t q = 1; q < A_red.size(); ++q) out += thetas[q](mu) * A_red[q];
  return out;
}

Matrix Stage1Rom::reduced_rhs(const std::vector<ThetaFunction>& thetas, const Vector& mu) const {
  Matrix out = thetas[0](mu) * G_red[0];
  for (size_t q = 1; q < G_red.size(); ++q) out += thetas[q](mu) * G_red[q];
  return out;
}

Vector Stage1Rom::residual_coordinates(const std::vector<ThetaFunction>& thetas,
                                       const Vector& mu, const Vector& lambda,
                                       const Vector& c) const {
  Vector out = Vector::Zero(residual_dim());
  for (size_t q = 0; q < Ahat.size(); ++q) {
    const double t = thetas[q](mu);
    if (t == 0.0) continue;
    out += t * (Ghat[q] * lambda);
    if (c.size() > 0) out -= t * (Ahat[q] * c);
  }
  return out;
}

double stage1_estimate(const Stage1Rom& rom, const LodSystem& lod, const Vector& mu,
                       const Vector& lambda, const Vector& c) {
  return rom.residual_coordinates(lod.thetas, mu, lambda, c).norm() /
         std::sqrt(lod.constants.alpha);
}

Stage1Solve stage1_solve_all(const Stage1Rom& rom, const LodSystem& lod, const Vector& mu) {
  Stage1Solve out;
  const int J = static_cast<int>(rom.G_red.front().cols());
  if (rom.dim() == 0) {
    out.coefficients = Matrix::Zero(0, J);
  } else {
    const Matrix A = rom.reduced_operator(lod.thetas, mu);
    const Matrix G = rom.reduced_rhs(lod.thetas, mu);
    Eigen::LDLT<Matrix> solver(A);
    if (solver.info() != Eigen::Success)
      throw SingularSystemError("stage1_solve_all: reduced corrector matrix is singular");
    out.coefficients = solver.solve(G);
  }
  out.k_block = Matrix::Zero(rom.K0.front().rows(), J);
  for (size_t q = 0; q < rom.K0.size(); ++q) {
    const double t = lod.thetas[q](mu);
    if (t == 0.0) continue;
    out.k_block += t * rom.K0[q];
    if (rom.dim() > 0) out.k_block -= t * (rom.Krb[q] * out.coefficients);
  }
  return out;
}

Stage1Builder::Stage1Builder(const LodSystem& lod, int element)
    : lod_(&lod),
      patch_(&lod.patches[element]),
      riesz_(lod, lod.patches[element], lod.patch_submatrix(lod.patches[element], lod.s_fine)),
      s_patch_(lod.patch_submatrix(lod.patches[element], lod.s_fine)) {
  rom_.element = element;
  rom_.basis.resize(patch_->n_dofs(), 0);
  const int J = patch_->n_shape();
  for (size_t q = 0; q < lod.fields.size(); ++q) {
    a_patch_.push_back(lod.patch_submatrix(*patch_, lod.a_fine.components[q]));
    Matrix rhs(patch_->n_dofs(), J);
    for (int j = 0; j < J; ++j) {
      Vector e = Vector::Zero(lod.n_coarse_dofs());
      e[patch_->coarse_basis[j]] = 1.0;
      rhs.col(j) = lod.restrict_to_patch(
          *patch_, lod.t_restricted_apply(*patch_, static_cast<int>(q), lod.prolongation * e));
    }
    rhs_columns_.push_back(std::move(rhs));
  }
  assemble_blocks();
}

bool Stage1Builder::extend(const Vector& mu, int shape_index) {
  // Exact corrector snapshot via the patch saddle at mu.
  SparseMatrix A_mu_patch = lod_->thetas[0](mu) * a_patch_[0];
  for (size_t q = 1; q < a_patch_.size(); ++q) A_mu_patch += lod_->thetas[q](mu) * a_patch_[q];
  const PatchSolver solver(*lod_, *patch_, A_mu_patch);
  Vector rhs = Vector::Zero(patch_->n_dofs());
  for (size_t q = 0; q < rhs_columns_.size(); ++q)
    rhs += lod_->thetas[q](mu) * rhs_columns_[q].col(shape_index);
  Vector snapshot = solver.solve(rhs);
  ++n_snapshots_;

  if (orthonormal_insert(std::move(snapshot)) == 0) return false;
  assemble_blocks();
  return true;
}

int Stage1Builder::orthonormal_insert(Vector snapshot) {
  const double norm0 = std::sqrt(std::max(0.0, snapshot.dot(s_patch_ * snapshot)));
  if (norm0 == 0.0) return 0;
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index b = 0; b < rom_.basis.cols(); ++b) {
      const Vector pb = rom_.basis.col(b);
      snapshot -= pb.dot(s_patch_ * snapshot) * pb;
    }
  const double norm1 = std::sqrt(std::max(0.0, snapshot.dot(s_patch_ * snapshot)));
  if (norm1 < 1e-10 * norm0) return 0;
  rom_.basis.conservativeResize(Eigen::NoChange, rom_.basis.cols() + 1);
  rom_.basis.col(rom_.basis.cols() - 1) = snapshot / norm1;
  return 1;
}

void Stage1Builder::assemble_blocks() {
  const LodSystem& lod = *lod_;
  const Patch& patch = *patch_;
  const int J = patch.n_shape();
  const Eigen::Index N = rom_.basis.cols();
  const size_t n_comp = lod.fields.size();

  rom_.A_red.assign(n_comp, Matrix());
  rom_.G_red.assign(n_comp, Matrix());
  rom_.K0.assign(n_comp, Matrix());
  rom_.Krb.assign(n_comp, Matrix());
  for (size_t q = 0; q < n_comp; ++q) {
    rom_.A_red[q] = rom_.basis.transpose() * (a_patch_[q] * rom_.basis);
    rom_.G_red[q] = rom_.basis.transpose() * rhs_columns_[q];
    Matrix k0(static_cast<Eigen::Index>(patch.coarse_rows.size()), J);
    for (int j = 0; j < J; ++j) {
      Vector e = Vector::Zero(lod.n_coarse_dofs());
      e[patch.coarse_basis[j]] = 1.0;
      const Vector column =
          lod.prolongation.transpose() *
          lod.t_restricted_apply(patch, static_cast<int>(q), lod.prolongation * e);
      for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
        k0(static_cast<Eigen::Index>(r), j) = column[patch.coarse_rows[r]];
    }
    rom_.K0[q] = std::move(k0);
    Matrix krb(static_cast<Eigen::Index>(patch.coarse_rows.size()), N);
    for (Eigen::Index n = 0; n < N; ++n) {
      const Vector column =
          lod.prolongation.transpose() *
          (lod.a_fine.components[q] * lod.prolong_from_patch(patch, rom_.basis.col(n)));
      for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
        krb(static_cast<Eigen::Index>(r), n) = column[patch.coarse_rows[r]];
    }
    rom_.Krb[q] = std::move(krb);
  }

  // Residual data: constrained Riesz representatives of all generators,
  // orthonormalized in the patch H1 product.
  std::vector<Vector> functionals;
  for (Eigen::Index n = 0; n < N; ++n)
    for (size_t q = 0; q < n_comp; ++q) functionals.push_back(a_patch_[q] * rom_.basis.col(n));
  for (int j = 0; j < J; ++j)
    for (size_t q = 0; q < n_comp; ++q) functionals.push_back(rhs_columns_[q].col(j));

  Matrix onb(patch.n_dofs(), 0);
  for (const auto& f : functionals) {
    Vector rep = riesz_.solve(f);
    const double norm0 = std::sqrt(std::max(0.0, rep.dot(s_patch_ * rep)));
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index b = 0; b < onb.cols(); ++b) {
        const Vector pb = onb.col(b);
        rep -= pb.dot(s_patch_ * rep) * pb;
      }
    const double norm1 = std::sqrt(std::max(0.0, rep.dot(s_patch_ * rep)));
    if (norm1 < 1e-13 * norm0) continue;
    rep /= norm1;
    // Normalizing a near-dependent vector amplifies the roundoff component
    // outside ker(I_H); project it back (S-orthogonal, so the basis stays
    // orthonormal) and renormalize.
    rep = riesz_.solve(s_patch_ * rep);
    const double norm2 = std::sqrt(std::max(0.0, rep.dot(s_patch_ * rep)));
    if (norm2 == 0.0) continue;
    onb.conservativeResize(Eigen::NoChange, onb.cols() + 1);
    onb.col(onb.cols() - 1) = rep / norm2;
  }
  const Eigen::Index M = onb.cols();
  rom_.Ahat.assign(n_comp, Matrix::Zero(M, N));
  rom_.Ghat.assign(n_comp, Matrix::Zero(M, J));
  if (M > 0) {
    for (size_t q = 0; q < n_comp; ++q) {
      // Coordinates of the residual components in the orthonormal basis:
      // (riesz(f), chi_m)_S = f . chi_m.
      rom_.Ahat[q] = onb.transpose() * (a_patch_[q] * rom_.basis);
      rom_.Ghat[q] = onb.transpose() * rhs_columns_[q];
    }
  }
}

Stage1GreedyResult stage1_greedy(const LodSystem& lod, int element,
                                 const std::vector<Vector>& training_set, double tol,
                                 int max_extensions) {
  require(!training_set.empty(), "stage1_greedy: empty training set");
  Stage1GreedyResult result;
  Stage1Builder builder(lod, element);
  const Patch& patch = lod.patches[element];
  const int J = patch.n_shape();

  for (int step = 0; step < max_extensions; ++step) {
    if (builder.rom().dim() >= patch.n_dofs()) break;  // exact space reached
    double worst = -1.0;
    Vector worst_mu;
    int worst_shape = 0;
    for (const auto& mu : training_set) {
      Matrix coeffs = Matrix::Zero(builder.rom().dim(), J);
      if (builder.rom().dim() > 0) {
        const Matrix A = builder.rom().reduced_operator(lod.thetas, mu);
        const Matrix G = builder.rom().reduced_rhs(lod.thetas, mu);
        coeffs = A.ldlt().solve(G);
      }
      for (int j = 0; j < J; ++j) {
        Vector lambda = Vector::Zero(J);
        lambda[j] = 1.0;
        const double eta = stage1_estimate(builder.rom(), lod, mu, lambda, coeffs.col(j));
        if (eta > worst) {
          worst = eta;
          worst_mu = mu;
          worst_shape = j;
        }
      }
    }
    if (worst <= tol) {
      result.converged = true;
      break;
    }
    result.trace.push_back({step, worst_mu, worst_shape, worst});
    builder.extend(worst_mu, worst_shape);
  }
  result.rom = builder.rom();
  if (!result.converged && builder.rom().dim() >= patch.n_dofs()) result.converged = true;
  return result;
}

}  // namespace rbopt
