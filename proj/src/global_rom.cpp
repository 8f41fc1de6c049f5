#include "rbopt/global_rom.hpp"

#include <Eigen/Dense>
#include <fstream>

#include <json.hpp>

namespace rbopt {

namespace {

Matrix project(const Matrix& left, const SparseMatrix& op, const Matrix& right) {
  return left.transpose() * (op * right);
}

// Largest generalized eigenvalue of (K, X) by power iteration on X^{-1} K.
double operator_norm(const SparseMatrix& K, const FomSystem& fom) {
  if (K.rows() == 0) return 0.0;
  Vector v = Vector::Ones(K.rows());
  v /= fom.product_norm(v);
  double lambda = 0.0;
  for (int it = 0; it < 300; ++it) {
    Vector w = fom.riesz(K * v);
    const double nw = fom.product_norm(w);
    if (nw == 0.0) return 0.0;
    w /= nw;
    const double next = w.dot(K * w) / w.dot(fom.product * w);
    if (std::abs(next - lambda) <= 1e-13 * std::max(1.0, std::abs(next)) && it > 5) {
      lambda = next;
      break;
    }
    lambda = next;
    v = w;
  }
  return std::abs(lambda) * (1.0 + 1e-8);
}

Matrix assemble_affine(const std::vector<Matrix>& comps, const std::vector<ThetaFunction>& thetas,
                       const Vector& mu) {
  require(!comps.empty(), "assemble_affine: empty component list");
  Matrix out = thetas[0](mu) * comps[0];
  for (size_t q = 1; q < comps.size(); ++q) out += thetas[q](mu) * comps[q];
  return out;
}

Vector assemble_affine(const std::vector<Vector>& comps, const std::vector<ThetaFunction>& thetas,
                       const Vector& mu) {
  require(!comps.empty(), "assemble_affine: empty component list");
  Vector out = thetas[0](mu) * comps[0];
  for (size_t q = 1; q < comps.size(); ++q) out += thetas[q](mu) * comps[q];
  return out;
}

Matrix assemble_affine_partial(const std::vector<Matrix>& comps,
                               const std::vector<ThetaFunction>& thetas, const Vector& mu,
                               int i, Eigen::Index rows, Eigen::Index cols) {
  Matrix out = Matrix::Zero(rows, cols);
  for (size_t q = 0; q < comps.size(); ++q) {
    const double t = thetas[q].d(mu, i);
    if (t != 0.0) out += t * comps[q];
  }
  return out;
}

Vector assemble_affine_partial(const std::vector<Vector>& comps,
                               const std::vector<ThetaFunction>& thetas, const Vector& mu,
                               int i, Eigen::Index rows) {
  Vector out = Vector::Zero(rows);
  for (size_t q = 0; q < comps.size(); ++q) {
    const double t = thetas[q].d(mu, i);
    if (t != 0.0) out += t * comps[q];
  }
  return out;
}

// Orthonormalizes the Riesz representatives of the given functionals w.r.t.
// the energy product and returns the component coefficients in that basis.
// With `stable == false` returns the Gram matrix instead.
ResidualFamily build_family(const FomSystem& fom, const std::vector<Vector>& functionals,
                            bool stable) {
  ResidualFamily family;
  family.stable = stable;
  const Eigen::Index n_comp = static_cast<Eigen::Index>(functionals.size());
  if (n_comp == 0) return family;
  std::vector<Vector> riesz(functionals.size());
  for (size_t c = 0; c < functionals.size(); ++c) riesz[c] = fom.riesz(functionals[c]);
  if (!stable) {
    family.gram.resize(n_comp, n_comp);
    for (Eigen::Index c1 = 0; c1 < n_comp; ++c1)
      for (Eigen::Index c2 = 0; c2 <= c1; ++c2) {
        const double v = functionals[static_cast<size_t>(c1)].dot(riesz[static_cast<size_t>(c2)]);
        family.gram(c1, c2) = v;
        family.gram(c2, c1) = v;
      }
    return family;
  }
  Matrix onb(functionals[0].size(), 0);
  for (size_t c = 0; c < riesz.size(); ++c) {
    Vector v = riesz[c];
    const double norm0 = fom.product_norm(v);
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index b = 0; b < onb.cols(); ++b) {
        const Vector pb = onb.col(b);
        v -= pb.dot(fom.product * v) * pb;
      }
    const double norm1 = fom.product_norm(v);
    if (norm1 < 1e-13 * norm0) continue;
    onb.conservativeResize(Eigen::NoChange, onb.cols() + 1);
    onb.col(onb.cols() - 1) = v / norm1;
  }
  family.onb_coeffs.resize(onb.cols(), n_comp);
  for (Eigen::Index c = 0; c < n_comp; ++c)
    family.onb_coeffs.col(c) = onb.transpose() * functionals[static_cast<size_t>(c)];
  return family;
}

}  // namespace

double ResidualFamily::norm(const Vector& coeffs) const {
  if (stable) {
    if (onb_coeffs.size() == 0) return 0.0;
    return (onb_coeffs * coeffs).norm();
  }
  if (gram.size() == 0) return 0.0;
  return std::sqrt(std::max(0.0, coeffs.dot(gram * coeffs)));
}

double GlobalRom::coercivity_lb(const Vector& mu) const {
  return min_theta_coercivity(fom->a, fom->mu_bar, mu);
}

double GlobalRom::continuity_a(const Vector& mu) const {
  if (fom->a.psd_components) return max_theta_continuity(fom->a, fom->mu_bar, mu);
  double out = 0.0;
  for (size_t q = 0; q < fom->a.components.size(); ++q)
    out += std::abs(fom->a.thetas[q](mu));  // components bounded by the product
  return out;
}

double GlobalRom::continuity_da(const Vector& mu, int i) const {
  Vector coeffs(static_cast<Eigen::Index>(fom->a.thetas.size()));
  bool nonneg = true;
  for (size_t q = 0; q < fom->a.thetas.size(); ++q) {
    coeffs[static_cast<Eigen::Index>(q)] = fom->a.thetas[q].d(mu, i);
    nonneg = nonneg && coeffs[static_cast<Eigen::Index>(q)] >= 0.0;
  }
  if (fom->a.psd_components && nonneg)
    return max_theta_continuity_coeffs(fom->a, fom->mu_bar, coeffs);
  return coeffs.cwiseAbs().sum();
}

double GlobalRom::continuity_k(const Vector& mu) const {
  double out = 0.0;
  for (size_t q = 0; q < fom->objective.k.thetas.size(); ++q)
    out += std::abs(fom->objective.k.thetas[q](mu));
  return out * k_base_norm;
}

double GlobalRom::continuity_dk(const Vector& mu, int i) const {
  double out = 0.0;
  for (size_t q = 0; q < fom->objective.k.thetas.size(); ++q)
    out += std::abs(fom->objective.k.thetas[q].d(mu, i));
  return out * k_base_norm;
}

double GlobalRom::dual_norm_dl(const Vector& mu, int i) const {
  double out = 0.0;
  for (size_t q = 0; q < fom->l.thetas.size(); ++q)
    out += std::abs(fom->l.thetas[q].d(mu, i)) * l_comp_dual_norms[q];
  return out;
}

double GlobalRom::dual_norm_dj(const Vector& mu, int i) const {
  double out = 0.0;
  for (size_t q = 0; q < fom->objective.j.thetas.size(); ++q)
    out += std::abs(fom->objective.j.thetas[q].d(mu, i)) * j_comp_dual_norms[q];
  return out;
}

Matrix GlobalRom::reduced_App(const Vector& mu) const {
  return assemble_affine(A_pp, fom->a.thetas, mu);
}
Matrix GlobalRom::reduced_Add(const Vector& mu) const {
  return assemble_affine(A_dd, fom->a.thetas, mu);
}
Matrix GlobalRom::reduced_Adp(const Vector& mu) const {
  return assemble_affine(A_dp, fom->a.thetas, mu);
}
Matrix GlobalRom::reduced_Kpp(const Vector& mu) const {
  if (K_pp.empty()) return Matrix::Zero(dim_pr(), dim_pr());
  return assemble_affine(K_pp, fom->objective.k.thetas, mu);
}
Matrix GlobalRom::reduced_Kdp(const Vector& mu) const {
  if (K_dp.empty()) return Matrix::Zero(dim_du(), dim_pr());
  return assemble_affine(K_dp, fom->objective.k.thetas, mu);
}
Vector GlobalRom::reduced_lpr(const Vector& mu) const {
  return assemble_affine(l_pr, fom->l.thetas, mu);
}
Vector GlobalRom::reduced_ldu(const Vector& mu) const {
  return assemble_affine(l_du, fom->l.thetas, mu);
}
Vector GlobalRom::reduced_jpr(const Vector& mu) const {
  if (j_pr.empty()) return Vector::Zero(dim_pr());
  return assemble_affine(j_pr, fom->objective.j.thetas, mu);
}
Vector GlobalRom::reduced_jdu(const Vector& mu) const {
  if (j_du.empty()) return Vector::Zero(dim_du());
  return assemble_affine(j_du, fom->objective.j.thetas, mu);
}

double GlobalRom::primal_family_norm(const Vector& coeff_l, const Matrix& coeff_Au) const {
  require(estimators_built, "GlobalRom: estimator data not built");
  const Eigen::Index xi_l = coeff_l.size();
  Vector coeffs(xi_l + coeff_Au.size());
  coeffs.head(xi_l) = coeff_l;
  Eigen::Index c = xi_l;
  for (Eigen::Index n = 0; n < coeff_Au.cols(); ++n)
    for (Eigen::Index q = 0; q < coeff_Au.rows(); ++q) coeffs[c++] = coeff_Au(q, n);
  return res_pr.norm(coeffs);
}

double GlobalRom::dual_family_norm(const Vector& coeff_j, const Matrix& coeff_Ku,
                                   const Matrix& coeff_Ap) const {
  require(estimators_built, "GlobalRom: estimator data not built");
  Vector coeffs(coeff_j.size() + coeff_Ku.size() + coeff_Ap.size());
  Eigen::Index c = 0;
  for (Eigen::Index q = 0; q < coeff_j.size(); ++q) coeffs[c++] = coeff_j[q];
  for (Eigen::Index n = 0; n < coeff_Ku.cols(); ++n)
    for (Eigen::Index q = 0; q < coeff_Ku.rows(); ++q) coeffs[c++] = coeff_Ku(q, n);
  for (Eigen::Index m = 0; m < coeff_Ap.cols(); ++m)
    for (Eigen::Index q = 0; q < coeff_Ap.rows(); ++q) coeffs[c++] = coeff_Ap(q, m);
  return res_du.norm(coeffs);
}

double GlobalRom::primal_residual_norm(const Vector& mu, const Vector& u) const {
  const Eigen::Index xi_l = static_cast<Eigen::Index>(fom->l.components.size());
  const Eigen::Index xi_a = static_cast<Eigen::Index>(fom->a.components.size());
  Vector coeff_l(xi_l);
  for (Eigen::Index q = 0; q < xi_l; ++q) coeff_l[q] = fom->l.thetas[static_cast<size_t>(q)](mu);
  Matrix coeff_Au(xi_a, u.size());
  for (Eigen::Index q = 0; q < xi_a; ++q)
    coeff_Au.row(q) = -fom->a.thetas[static_cast<size_t>(q)](mu) * u.transpose();
  return primal_family_norm(coeff_l, coeff_Au);
}

double GlobalRom::dual_residual_norm(const Vector& mu, const Vector& u, const Vector& p) const {
  const Eigen::Index xi_j = static_cast<Eigen::Index>(fom->objective.j.components.size());
  const Eigen::Index xi_k = static_cast<Eigen::Index>(fom->objective.k.components.size());
  const Eigen::Index xi_a = static_cast<Eigen::Index>(fom->a.components.size());
  Vector coeff_j(xi_j);
  for (Eigen::Index q = 0; q < xi_j; ++q)
    coeff_j[q] = fom->objective.j.thetas[static_cast<size_t>(q)](mu);
  Matrix coeff_Ku(xi_k, u.size());
  for (Eigen::Index q = 0; q < xi_k; ++q)
    coeff_Ku.row(q) = 2.0 * fom->objective.k.thetas[static_cast<size_t>(q)](mu) * u.transpose();
  Matrix coeff_Ap(xi_a, p.size());
  for (Eigen::Index q = 0; q < xi_a; ++q)
    coeff_Ap.row(q) = -fom->a.thetas[static_cast<size_t>(q)](mu) * p.transpose();
  return dual_family_norm(coeff_j, coeff_Ku, coeff_Ap);
}

Vector GlobalRom::primal_sensitivity(const Vector& mu, const RomSolution& sol,
                                     const Vector& eta) const {
  const int P = static_cast<int>(mu.size());
  Vector rhs = Vector::Zero(dim_pr());
  for (int i = 0; i < P; ++i) {
    if (eta[i] == 0.0) continue;
    rhs += eta[i] * (assemble_affine_partial(l_pr, fom->l.thetas, mu, i, dim_pr()) -
                     assemble_affine_partial(A_pp, fom->a.thetas, mu, i, dim_pr(), dim_pr()) *
                         sol.u);
  }
  return reduced_App(mu).ldlt().solve(rhs);
}

Vector GlobalRom::dual_sensitivity(const Vector& mu, const RomSolution& sol, const Vector& eta,
                                   const Vector& du) const {
  const int P = static_cast<int>(mu.size());
  Vector rhs = Vector::Zero(dim_du());
  for (int i = 0; i < P; ++i) {
    if (eta[i] == 0.0) continue;
    Vector term = Vector::Zero(dim_du());
    if (!j_du.empty())
      term += assemble_affine_partial(j_du, fom->objective.j.thetas, mu, i, dim_du());
    if (!K_dp.empty())
      term += 2.0 *
              (assemble_affine_partial(K_dp, fom->objective.k.thetas, mu, i, dim_du(), dim_pr()) *
               sol.u);
    term -= assemble_affine_partial(A_dd, fom->a.thetas, mu, i, dim_du(), dim_du()) * sol.p;
    rhs += eta[i] * term;
  }
  if (!K_dp.empty()) rhs += 2.0 * (reduced_Kdp(mu) * du);
  return reduced_Add(mu).ldlt().solve(rhs);
}

double GlobalRom::correction_term(const Vector& mu, const Vector& u, const Vector& p) const {
  return reduced_ldu(mu).dot(p) - p.dot(reduced_Adp(mu) * u);
}

GlobalRom build_rom(const FomSystem& fom, const RbSpace& v_pr, const RbSpace& v_du,
                    RomVariant variant, bool stable, bool build_estimators) {
  require(v_pr.dim() > 0 && v_du.dim() > 0, "build_rom: empty RB space");
  if (variant == RomVariant::PetrovGalerkin)
    require(v_pr.dim() == v_du.dim(),
            "build_rom: PG variant requires equal primal/dual dimensions");
  GlobalRom rom;
  rom.fom = &fom;
  rom.variant = variant;
  rom.stable = stable;
  rom.v_pr = v_pr;
  rom.v_du = v_du;

  for (const auto& A : fom.a.components) {
    rom.A_pp.push_back(project(v_pr.basis, A, v_pr.basis));
    rom.A_dd.push_back(project(v_du.basis, A, v_du.basis));
    rom.A_dp.push_back(project(v_du.basis, A, v_pr.basis));
  }
  for (const auto& lq : fom.l.components) {
    rom.l_pr.push_back(v_pr.basis.transpose() * lq);
    rom.l_du.push_back(v_du.basis.transpose() * lq);
  }
  for (const auto& jq : fom.objective.j.components) {
    rom.j_pr.push_back(v_pr.basis.transpose() * jq);
    rom.j_du.push_back(v_du.basis.transpose() * jq);
  }
  for (const auto& Kq : fom.objective.k.components) {
    rom.K_pp.push_back(project(v_pr.basis, Kq, v_pr.basis));
    rom.K_dd.push_back(project(v_du.basis, Kq, v_du.basis));
    rom.K_dp.push_back(project(v_du.basis, Kq, v_pr.basis));
  }

  if (build_estimators) build_estimator_data(rom);
  return rom;
}

void build_estimator_data(GlobalRom& rom) {
  const FomSystem& fom = *rom.fom;
  // Primal residual family: [l_q] + [A_q psi^pr_n].
  std::vector<Vector> primal;
  for (const auto& lq : fom.l.components) primal.push_back(lq);
  for (Eigen::Index n = 0; n < rom.v_pr.dim(); ++n)
    for (const auto& A : fom.a.components) primal.push_back(A * rom.v_pr.basis.col(n));
  rom.res_pr = build_family(fom, primal, rom.stable);

  // Dual residual family: [j_q] + [K_q psi^pr_n] + [A_q psi^du_m].
  std::vector<Vector> dual;
  for (const auto& jq : fom.objective.j.components) dual.push_back(jq);
  for (Eigen::Index n = 0; n < rom.v_pr.dim(); ++n)
    for (const auto& Kq : fom.objective.k.components) dual.push_back(Kq * rom.v_pr.basis.col(n));
  for (Eigen::Index m = 0; m < rom.v_du.dim(); ++m)
    for (const auto& A : fom.a.components) dual.push_back(A * rom.v_du.basis.col(m));
  rom.res_du = build_family(fom, dual, rom.stable);

  rom.l_comp_dual_norms.clear();
  for (const auto& lq : fom.l.components) rom.l_comp_dual_norms.push_back(fom.dual_norm(lq));
  rom.j_comp_dual_norms.clear();
  for (const auto& jq : fom.objective.j.components)
    rom.j_comp_dual_norms.push_back(fom.dual_norm(jq));

  rom.k_base_norm = 0.0;
  for (const auto& Kq : fom.objective.k.components)
    rom.k_base_norm = std::max(rom.k_base_norm, operator_norm(Kq, fom));
  rom.estimators_built = true;
}

RomSolution rom_solve(const GlobalRom& rom, const Vector& mu) {
  RomSolution sol;
  sol.mu = mu;
  if (rom.variant == RomVariant::PetrovGalerkin) {
    const Matrix Adp = rom.reduced_Adp(mu);
    Eigen::FullPivLU<Matrix> lu(Adp);
    if (!lu.isInvertible())
      throw SingularSystemError("rom_solve: PG reduced primal system is singular");
    sol.u = lu.solve(rom.reduced_ldu(mu));
    const Matrix Apd = Adp.transpose();
    Eigen::FullPivLU<Matrix> lu_du(Apd);
    if (!lu_du.isInvertible())
      throw SingularSystemError("rom_solve: PG reduced dual system is singular");
    sol.p = lu_du.solve(rom.reduced_jpr(mu) + 2.0 * (rom.reduced_Kpp(mu) * sol.u));
    sol.z = Vector::Zero(rom.dim_du());
    sol.w = Vector::Zero(rom.dim_pr());
    sol.value = rom_functional(rom, sol);
    return sol;
  }
  const Matrix App = rom.reduced_App(mu);
  const Matrix Add = rom.reduced_Add(mu);
  Eigen::LDLT<Matrix> pr(App);
  Eigen::LDLT<Matrix> du(Add);
  if (pr.info() != Eigen::Success || du.info() != Eigen::Success)
    throw SingularSystemError("rom_solve: reduced operator factorization failed");
  sol.u = pr.solve(rom.reduced_lpr(mu));
  sol.p = du.solve(rom.reduced_jdu(mu) + 2.0 * (rom.reduced_Kdp(mu) * sol.u));
  // NCD auxiliary problems; both vanish for conforming spaces.
  const Vector rpr_du = rom.reduced_ldu(mu) - rom.reduced_Adp(mu) * sol.u;
  sol.z = du.solve(-rpr_du);
  Vector w_rhs = rom.reduced_jpr(mu) + 2.0 * (rom.reduced_Kpp(mu) * sol.u) -
                 rom.reduced_Adp(mu).transpose() * sol.p -
                 2.0 * (rom.reduced_Kdp(mu).transpose() * sol.z);
  sol.w = pr.solve(w_rhs);
  sol.value = rom_functional(rom, sol);
  return sol;
}

double rom_functional(const GlobalRom& rom, const RomSolution& sol) {
  const FomSystem& fom = *rom.fom;
  double value = fom.objective.theta ? fom.objective.theta(sol.mu) : 0.0;
  value += rom.reduced_jpr(sol.mu).dot(sol.u);
  value += sol.u.dot(rom.reduced_Kpp(sol.mu) * sol.u);
  if (rom.variant == RomVariant::Ncd)
    value += rom.correction_term(sol.mu, sol.u, sol.p);
  return value;
}

Vector rom_gradient(const GlobalRom& rom, const RomSolution& sol, GradientMode mode) {
  const FomSystem& fom = *rom.fom;
  const Vector& mu = sol.mu;
  const int P = static_cast<int>(mu.size());
  if (rom.variant == RomVariant::PetrovGalerkin)
    require(mode == GradientMode::Pg, "rom_gradient: PG variant requires mode Pg");
  if (mode == GradientMode::Pg)
    require(rom.variant == RomVariant::PetrovGalerkin,
            "rom_gradient: mode Pg requires the PG variant");
  if (rom.variant == RomVariant::Standard)
    require(mode == GradientMode::Inexact,
            "rom_gradient: standard variant only provides the inexact gradient");

  Vector grad =
      fom.objective.theta_gradient ? fom.objective.theta_gradient(mu) : Vector::Zero(P);
  for (int i = 0; i < P; ++i) {
    // d_mu J(u_r, mu) + d_mu r^pr(u_r)[p_r]
    for (size_t q = 0; q < rom.j_pr.size(); ++q)
      grad[i] += fom.objective.j.thetas[q].d(mu, i) * rom.j_pr[q].dot(sol.u);
    for (size_t q = 0; q < rom.K_pp.size(); ++q)
      grad[i] += fom.objective.k.thetas[q].d(mu, i) * sol.u.dot(rom.K_pp[q] * sol.u);
    for (size_t q = 0; q < rom.l_du.size(); ++q)
      grad[i] += fom.l.thetas[q].d(mu, i) * rom.l_du[q].dot(sol.p);
    for (size_t q = 0; q < rom.A_dp.size(); ++q)
      grad[i] -= fom.a.thetas[q].d(mu, i) * sol.p.dot(rom.A_dp[q] * sol.u);
  }
  if (mode == GradientMode::Inexact || mode == GradientMode::Pg) return grad;

  if (mode == GradientMode::NcdAdjoint) {
    for (int i = 0; i < P; ++i) {
      // + d_mu r^pr(u_r)[w]
      for (size_t q = 0; q < rom.l_pr.size(); ++q)
        grad[i] += fom.l.thetas[q].d(mu, i) * rom.l_pr[q].dot(sol.w);
      for (size_t q = 0; q < rom.A_pp.size(); ++q)
        grad[i] -= fom.a.thetas[q].d(mu, i) * sol.w.dot(rom.A_pp[q] * sol.u);
      // - d_mu r^du(u_r, p_r)[z]
      for (size_t q = 0; q < rom.j_du.size(); ++q)
        grad[i] -= fom.objective.j.thetas[q].d(mu, i) * rom.j_du[q].dot(sol.z);
      for (size_t q = 0; q < rom.K_dp.size(); ++q)
        grad[i] -= 2.0 * fom.objective.k.thetas[q].d(mu, i) * sol.z.dot(rom.K_dp[q] * sol.u);
      for (size_t q = 0; q < rom.A_dd.size(); ++q)
        grad[i] += fom.a.thetas[q].d(mu, i) * sol.z.dot(rom.A_dd[q] * sol.p);
    }
    return grad;
  }

  // NcdSensitivity: + r^pr(u_r)[d_i p_r] + r^du(u_r, p_r)[d_i u_r]
  const Matrix Adp = rom.reduced_Adp(mu);
  const Matrix Kpp = rom.reduced_Kpp(mu);
  const Vector jpr = rom.reduced_jpr(mu);
  const Vector ldu = rom.reduced_ldu(mu);
  for (int i = 0; i < P; ++i) {
    Vector e = Vector::Zero(P);
    e[i] = 1.0;
    const Vector du = rom.primal_sensitivity(mu, sol, e);
    const Vector dp = rom.dual_sensitivity(mu, sol, e, du);
    grad[i] += ldu.dot(dp) - dp.dot(Adp * sol.u);
    grad[i] += jpr.dot(du) + 2.0 * du.dot(Kpp * sol.u) - sol.p.dot(Adp * du);
  }
  return grad;
}

Vector rom_hessian_vec(const GlobalRom& rom, const RomSolution& sol, const Vector& eta) {
  const FomSystem& fom = *rom.fom;
  const Vector& mu = sol.mu;
  const int P = static_cast<int>(mu.size());
  require(rom.variant != RomVariant::PetrovGalerkin,
          "rom_hessian_vec: implemented for the Galerkin variants");

  const Vector du = rom.primal_sensitivity(mu, sol, eta);
  const Vector dp = rom.dual_sensitivity(mu, sol, eta, du);

  // Sensitivities of the auxiliary variables z and w.
  const Matrix App = rom.reduced_App(mu);
  const Matrix Add = rom.reduced_Add(mu);
  const Matrix Adp = rom.reduced_Adp(mu);
  const Matrix Kdp = rom.reduced_Kdp(mu);
  const Matrix Kpp = rom.reduced_Kpp(mu);

  Vector rhs_dz = Vector::Zero(rom.dim_du());
  for (int i = 0; i < P; ++i) {
    if (eta[i] == 0.0) continue;
    Vector term = assemble_affine_partial(rom.l_du, fom.l.thetas, mu, i, rom.dim_du()) -
                  assemble_affine_partial(rom.A_dp, fom.a.thetas, mu, i, rom.dim_du(),
                                          rom.dim_pr()) *
                      sol.u;
    term += assemble_affine_partial(rom.A_dd, fom.a.thetas, mu, i, rom.dim_du(), rom.dim_du()) *
            sol.z;
    rhs_dz -= eta[i] * term;
  }
  rhs_dz += Adp * du;
  const Vector dz = Add.ldlt().solve(rhs_dz);

  Vector rhs_dw = Vector::Zero(rom.dim_pr());
  for (int i = 0; i < P; ++i) {
    if (eta[i] == 0.0) continue;
    Vector term = Vector::Zero(rom.dim_pr());
    if (!rom.j_pr.empty())
      term += assemble_affine_partial(rom.j_pr, fom.objective.j.thetas, mu, i, rom.dim_pr());
    if (!rom.K_pp.empty())
      term += 2.0 * (assemble_affine_partial(rom.K_pp, fom.objective.k.thetas, mu, i,
                                             rom.dim_pr(), rom.dim_pr()) *
                     sol.u);
    term -= assemble_affine_partial(rom.A_dp, fom.a.thetas, mu, i, rom.dim_du(), rom.dim_pr())
                .transpose() *
            sol.p;
    if (!rom.K_dp.empty())
      term -= 2.0 * (assemble_affine_partial(rom.K_dp, fom.objective.k.thetas, mu, i,
                                             rom.dim_du(), rom.dim_pr())
                         .transpose() *
                     sol.z);
    term -= assemble_affine_partial(rom.A_pp, fom.a.thetas, mu, i, rom.dim_pr(), rom.dim_pr()) *
            sol.w;
    rhs_dw += eta[i] * term;
  }
  if (!rom.K_pp.empty()) rhs_dw += 2.0 * (Kpp * du);
  if (!rom.K_dp.empty()) rhs_dw -= 2.0 * (Kdp.transpose() * dz);
  rhs_dw -= Adp.transpose() * dp;
  const Vector dw = App.ldlt().solve(rhs_dw);

  Vector out = Vector::Zero(P);
  const Vector pw = sol.p;  // dual part entering r^pr terms lives in V_du
  for (int i = 0; i < P; ++i) {
    double v = 0.0;
    // d_i [ j(du) + 2 k(u, du) ]
    for (size_t q = 0; q < rom.j_pr.size(); ++q)
      v += fom.objective.j.thetas[q].d(mu, i) * rom.j_pr[q].dot(du);
    for (size_t q = 0; q < rom.K_pp.size(); ++q)
      v += 2.0 * fom.objective.k.thetas[q].d(mu, i) * sol.u.dot(rom.K_pp[q] * du);
    // - d_i a(du, p + w)
    for (size_t q = 0; q < rom.A_dp.size(); ++q)
      v -= fom.a.thetas[q].d(mu, i) * pw.dot(rom.A_dp[q] * du);
    for (size_t q = 0; q < rom.A_pp.size(); ++q)
      v -= fom.a.thetas[q].d(mu, i) * sol.w.dot(rom.A_pp[q] * du);
    // + d_i r^pr(u)[dp + dw]
    for (size_t q = 0; q < rom.l_du.size(); ++q)
      v += fom.l.thetas[q].d(mu, i) * rom.l_du[q].dot(dp);
    for (size_t q = 0; q < rom.l_pr.size(); ++q)
      v += fom.l.thetas[q].d(mu, i) * rom.l_pr[q].dot(dw);
    for (size_t q = 0; q < rom.A_dp.size(); ++q)
      v -= fom.a.thetas[q].d(mu, i) * dp.dot(rom.A_dp[q] * sol.u);
    for (size_t q = 0; q < rom.A_pp.size(); ++q)
      v -= fom.a.thetas[q].d(mu, i) * dw.dot(rom.A_pp[q] * sol.u);
    // - 2 d_i k(z, du)
    for (size_t q = 0; q < rom.K_dp.size(); ++q)
      v -= 2.0 * fom.objective.k.thetas[q].d(mu, i) * sol.z.dot(rom.K_dp[q] * du);
    // + d_i a(z, dp)
    for (size_t q = 0; q < rom.A_dd.size(); ++q)
      v += fom.a.thetas[q].d(mu, i) * sol.z.dot(rom.A_dd[q] * dp);
    // - d_i r^du(u, p)[dz]
    for (size_t q = 0; q < rom.j_du.size(); ++q)
      v -= fom.objective.j.thetas[q].d(mu, i) * rom.j_du[q].dot(dz);
    for (size_t q = 0; q < rom.K_dp.size(); ++q)
      v -= 2.0 * fom.objective.k.thetas[q].d(mu, i) * dz.dot(rom.K_dp[q] * sol.u);
    for (size_t q = 0; q < rom.A_dd.size(); ++q)
      v += fom.a.thetas[q].d(mu, i) * dz.dot(rom.A_dd[q] * sol.p);
    out[i] = v;
  }

  if (fom.objective.theta_hessian) out += fom.objective.theta_hessian(mu) * eta;
  // Second partials of the coefficient functionals.
  for (int i = 0; i < P; ++i) {
    double v = 0.0;
    for (int m = 0; m < P; ++m) {
      if (eta[m] == 0.0) continue;
      for (size_t q = 0; q < rom.j_pr.size(); ++q)
        v += fom.objective.j.thetas[q].d2(mu, i, m) * eta[m] * rom.j_pr[q].dot(sol.u);
      for (size_t q = 0; q < rom.K_pp.size(); ++q)
        v += fom.objective.k.thetas[q].d2(mu, i, m) * eta[m] * sol.u.dot(rom.K_pp[q] * sol.u);
      for (size_t q = 0; q < rom.l_du.size(); ++q)
        v += fom.l.thetas[q].d2(mu, i, m) * eta[m] * rom.l_du[q].dot(sol.p);
      for (size_t q = 0; q < rom.l_pr.size(); ++q)
        v += fom.l.thetas[q].d2(mu, i, m) * eta[m] * rom.l_pr[q].dot(sol.w);
      for (size_t q = 0; q < rom.A_dp.size(); ++q)
        v -= fom.a.thetas[q].d2(mu, i, m) * eta[m] * sol.p.dot(rom.A_dp[q] * sol.u);
      for (size_t q = 0; q < rom.A_pp.size(); ++q)
        v -= fom.a.thetas[q].d2(mu, i, m) * eta[m] * sol.w.dot(rom.A_pp[q] * sol.u);
      for (size_t q = 0; q < rom.j_du.size(); ++q)
        v -= fom.objective.j.thetas[q].d2(mu, i, m) * eta[m] * rom.j_du[q].dot(sol.z);
      for (size_t q = 0; q < rom.K_dp.size(); ++q)
        v -= 2.0 * fom.objective.k.thetas[q].d2(mu, i, m) * eta[m] * sol.z.dot(rom.K_dp[q] * sol.u);
      for (size_t q = 0; q < rom.A_dd.size(); ++q)
        v += fom.a.thetas[q].d2(mu, i, m) * eta[m] * sol.z.dot(rom.A_dd[q] * sol.p);
    }
    out[i] += v;
  }
  return out;
}

double estimate(const GlobalRom& rom, const RomSolution& sol, EstimatorQuantity quantity) {
  const Vector& mu = sol.mu;
  const double alpha = rom.coercivity_lb(mu);
  const double r_pr = rom.primal_residual_norm(mu, sol.u);
  const double delta_pr = r_pr / alpha;
  switch (quantity) {
    case EstimatorQuantity::Primal:
    case EstimatorQuantity::PgPrimal:
      return delta_pr;
    case EstimatorQuantity::Dual:
    case EstimatorQuantity::PgDual: {
      const double r_du = rom.dual_residual_norm(mu, sol.u, sol.p);
      return (2.0 * rom.continuity_k(mu) * delta_pr + r_du) / alpha;
    }
    case EstimatorQuantity::Functional: {
      const double r_du = rom.dual_residual_norm(mu, sol.u, sol.p);
      const double corr = std::abs(rom.correction_term(mu, sol.u, sol.p));
      return delta_pr * r_du + delta_pr * delta_pr * rom.continuity_k(mu) + corr;
    }
    case EstimatorQuantity::FunctionalNcd:
    case EstimatorQuantity::PgFunctional: {
      const double r_du = rom.dual_residual_norm(mu, sol.u, sol.p);
      return delta_pr * r_du + delta_pr * delta_pr * rom.continuity_k(mu);
    }
    default:
      return estimate_gradient(rom, sol, quantity).norm();
  }
}

Vector estimate_gradient(const GlobalRom& rom, const RomSolution& sol, EstimatorQuantity which) {
  const FomSystem& fom = *rom.fom;
  const Vector& mu = sol.mu;
  const int P = static_cast<int>(mu.size());
  const double alpha = rom.coercivity_lb(mu);
  const double r_pr = rom.primal_residual_norm(mu, sol.u);
  const double r_du = rom.dual_residual_norm(mu, sol.u, sol.p);
  const double delta_pr = r_pr / alpha;
  const double delta_du = (2.0 * rom.continuity_k(mu) * delta_pr + r_du) / alpha;
  const double norm_u = sol.u.norm();  // energy norm: basis is orthonormal
  const double norm_p = sol.p.norm();

  Vector out(P);
  if (which == EstimatorQuantity::GradientStandard ||
      which == EstimatorQuantity::GradientNcdAdjoint) {
    const double z_bound = r_pr / alpha;
    const double w_bound = (r_du + 2.0 * rom.continuity_k(mu) * z_bound) / alpha;
    for (int i = 0; i < P; ++i) {
      const double c_da = rom.continuity_da(mu, i);
      const double c_dk = rom.continuity_dk(mu, i);
      const double c_dl = rom.dual_norm_dl(mu, i);
      const double c_dj = rom.dual_norm_dj(mu, i);
      double v = 2.0 * delta_pr * norm_u * c_dk;
      v += delta_pr * (c_dj + c_da * norm_p);
      v += delta_du * (c_dl + c_da * norm_u);
      v += delta_pr * delta_du * c_da;
      v += delta_pr * delta_pr * c_dk;
      if (which == EstimatorQuantity::GradientNcdAdjoint) {
        v += (c_dl + c_da * norm_u) * w_bound;
        v += z_bound * (c_dj + 2.0 * c_dk * norm_u + c_da * norm_p);
      }
      out[i] = v;
    }
    return out;
  }

  require(which == EstimatorQuantity::GradientNcdSens,
          "estimate_gradient: unsupported quantity");
  const Eigen::Index xi_l = static_cast<Eigen::Index>(fom.l.components.size());
  const Eigen::Index xi_a = static_cast<Eigen::Index>(fom.a.components.size());
  const Eigen::Index xi_j = static_cast<Eigen::Index>(fom.objective.j.components.size());
  const Eigen::Index xi_k = static_cast<Eigen::Index>(fom.objective.k.components.size());
  const double cont_a = rom.continuity_a(mu);
  for (int i = 0; i < P; ++i) {
    Vector e = Vector::Zero(P);
    e[i] = 1.0;
    const Vector du = rom.primal_sensitivity(mu, sol, e);
    const Vector dp = rom.dual_sensitivity(mu, sol, e, du);

    // || r^{pr, d_i}(u_r, d_i u_r) ||
    Vector coeff_l(xi_l);
    for (Eigen::Index q = 0; q < xi_l; ++q)
      coeff_l[q] = fom.l.thetas[static_cast<size_t>(q)].d(mu, i);
    Matrix coeff_Au(xi_a, sol.u.size());
    for (Eigen::Index q = 0; q < xi_a; ++q)
      coeff_Au.row(q) = -fom.a.thetas[static_cast<size_t>(q)].d(mu, i) * sol.u.transpose() -
                        fom.a.thetas[static_cast<size_t>(q)](mu) * du.transpose();
    const double r_pr_sens = rom.primal_family_norm(coeff_l, coeff_Au);
    const double delta_pr_sens = (rom.continuity_da(mu, i) * delta_pr + r_pr_sens) / alpha;

    // || r^{du, d_i}(u_r, p_r, d_i u_r, d_i p_r) ||
    Vector coeff_j(xi_j);
    for (Eigen::Index q = 0; q < xi_j; ++q)
      coeff_j[q] = fom.objective.j.thetas[static_cast<size_t>(q)].d(mu, i);
    Matrix coeff_Ku(xi_k, sol.u.size());
    for (Eigen::Index q = 0; q < xi_k; ++q)
      coeff_Ku.row(q) =
          2.0 * fom.objective.k.thetas[static_cast<size_t>(q)].d(mu, i) * sol.u.transpose() +
          2.0 * fom.objective.k.thetas[static_cast<size_t>(q)](mu) * du.transpose();
    Matrix coeff_Ap(xi_a, sol.p.size());
    for (Eigen::Index q = 0; q < xi_a; ++q)
      coeff_Ap.row(q) = -fom.a.thetas[static_cast<size_t>(q)].d(mu, i) * sol.p.transpose() -
                        fom.a.thetas[static_cast<size_t>(q)](mu) * dp.transpose();
    const double r_du_sens = rom.dual_family_norm(coeff_j, coeff_Ku, coeff_Ap);

    out[i] = rom.continuity_dk(mu, i) * delta_pr * delta_pr + cont_a * delta_pr_sens * delta_du +
             r_du_sens * delta_pr;
  }
  return out;
}

ParameterEstimate parameter_estimate(const FomSystem& fom, const Vector& mu,
                                     const Vector& fom_gradient) {
  const int P = fom.n_params();
  Matrix H(P, P);
  for (int i = 0; i < P; ++i) {
    Vector e = Vector::Zero(P);
    e[i] = 1.0;
    H.col(i) = fom.hessian_vec(mu, e);
  }
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
  ParameterEstimate est;
  est.lambda_min = eig.eigenvalues().minCoeff();
  if (est.lambda_min <= 0.0) {
    est.second_order_verified = false;
    return est;
  }
  Vector zeta(P);
  for (int i = 0; i < P; ++i) {
    if (mu[i] <= fom.box.lower[i])
      zeta[i] = -std::min(0.0, fom_gradient[i]);
    else if (mu[i] >= fom.box.upper[i])
      zeta[i] = -std::max(0.0, fom_gradient[i]);
    else
      zeta[i] = -fom_gradient[i];
  }
  est.second_order_verified = true;
  est.value = 2.0 / est.lambda_min * zeta.norm();
  return est;
}

GreedyResult goal_oriented_greedy(const FomSystem& fom, RbSpace& v_pr, RbSpace& v_du,
                                  const std::vector<Vector>& training_set, int max_extensions,
                                  double tol, RomVariant variant, bool stable) {
  require(!training_set.empty(), "goal_oriented_greedy: empty training set");
  GreedyResult result;
  const EstimatorQuantity quantity = variant == RomVariant::Ncd
                                         ? EstimatorQuantity::FunctionalNcd
                                         : EstimatorQuantity::Functional;
  for (int step = 0; step < max_extensions; ++step) {
    if (v_pr.empty() || v_du.empty()) {
      // Initialize with the first training parameter.
      const FomSolution snap = fom.solve(training_set.front());
      extend_basis(v_pr, snap.u, fom.product);
      extend_basis(v_du, snap.p, fom.product);
      result.steps.push_back({training_set.front(), 0.0});
      continue;
    }
    GlobalRom rom = build_rom(fom, v_pr, v_du, variant, stable, true);
    double worst = -1.0;
    Vector worst_mu;
    for (const auto& mu : training_set) {
      const RomSolution sol = rom_solve(rom, mu);
      const double est = estimate(rom, sol, quantity);
      if (est > worst) {
        worst = est;
        worst_mu = mu;
      }
    }
    if (worst <= tol) {
      result.converged = true;
      return result;
    }
    const FomSolution snap = fom.solve(worst_mu);
    extend_basis(v_pr, snap.u, fom.product);
    extend_basis(v_du, snap.p, fom.product);
    result.steps.push_back({worst_mu, worst});
  }
  return result;
}

namespace {
nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());
  out["data"] = data;
  return out;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == m.size(), "rom blob: size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json vector_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}
}  // namespace

void save_rom(const GlobalRom& rom, const std::string& path) {
  nlohmann::json j;
  j["format"] = "rbopt-global-rom";
  j["version"] = 1;
  j["variant"] = static_cast<int>(rom.variant);
  j["stable"] = rom.stable;
  j["estimators_built"] = rom.estimators_built;
  j["v_pr"] = matrix_to_json(rom.v_pr.basis);
  j["v_du"] = matrix_to_json(rom.v_du.basis);
  auto dump_mats = [](const std::vector<Matrix>& ms) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : ms) arr.push_back(matrix_to_json(m));
    return arr;
  };
  auto dump_vecs = [](const std::vector<Vector>& vs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : vs) arr.push_back(vector_to_json(v));
    return arr;
  };
  j["A_pp"] = dump_mats(rom.A_pp);
  j["A_dd"] = dump_mats(rom.A_dd);
  j["A_dp"] = dump_mats(rom.A_dp);
  j["K_pp"] = dump_mats(rom.K_pp);
  j["K_dd"] = dump_mats(rom.K_dd);
  j["K_dp"] = dump_mats(rom.K_dp);
  j["l_pr"] = dump_vecs(rom.l_pr);
  j["l_du"] = dump_vecs(rom.l_du);
  j["j_pr"] = dump_vecs(rom.j_pr);
  j["j_du"] = dump_vecs(rom.j_du);
  j["res_pr_stable"] = rom.res_pr.stable;
  j["res_pr_gram"] = matrix_to_json(rom.res_pr.gram);
  j["res_pr_onb"] = matrix_to_json(rom.res_pr.onb_coeffs);
  j["res_du_stable"] = rom.res_du.stable;
  j["res_du_gram"] = matrix_to_json(rom.res_du.gram);
  j["res_du_onb"] = matrix_to_json(rom.res_du.onb_coeffs);
  j["k_base_norm"] = rom.k_base_norm;
  j["l_comp_dual_norms"] = rom.l_comp_dual_norms;
  j["j_comp_dual_norms"] = rom.j_comp_dual_norms;
  std::ofstream out(path);
  require(out.good(), "save_rom: cannot open " + path);
  out << j.dump();
}

GlobalRom load_rom(const FomSystem& fom, const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_rom: cannot open " + path);
  nlohmann::json j;
  in >> j;
  require(j.at("format") == "rbopt-global-rom", "load_rom: unexpected blob format");
  GlobalRom rom;
  rom.fom = &fom;
  rom.variant = static_cast<RomVariant>(j.at("variant").get<int>());
  rom.stable = j.at("stable").get<bool>();
  rom.estimators_built = j.at("estimators_built").get<bool>();
  rom.v_pr.basis = matrix_from_json(j.at("v_pr"));
  rom.v_du.basis = matrix_from_json(j.at("v_du"));
  auto read_mats = [](const nlohmann::json& arr) {
    std::vector<Matrix> out;
    for (const auto& m : arr) out.push_back(matrix_from_json(m));
    return out;
  };
  auto read_vecs = [](const nlohmann::json& arr) {
    std::vector<Vector> out;
    for (const auto& v : arr) out.push_back(vector_from_json(v));
    return out;
  };
  rom.A_pp = read_mats(j.at("A_pp"));
  rom.A_dd = read_mats(j.at("A_dd"));
  rom.A_dp = read_mats(j.at("A_dp"));
  rom.K_pp = read_mats(j.at("K_pp"));
  rom.K_dd = read_mats(j.at("K_dd"));
  rom.K_dp = read_mats(j.at("K_dp"));
  rom.l_pr = read_vecs(j.at("l_pr"));
  rom.l_du = read_vecs(j.at("l_du"));
  rom.j_pr = read_vecs(j.at("j_pr"));
  rom.j_du = read_vecs(j.at("j_du"));
  rom.res_pr.stable = j.at("res_pr_stable").get<bool>();
  rom.res_pr.gram = matrix_from_json(j.at("res_pr_gram"));
  rom.res_pr.onb_coeffs = matrix_from_json(j.at("res_pr_onb"));
  rom.res_du.stable = j.at("res_du_stable").get<bool>();
  rom.res_du.gram = matrix_from_json(j.at("res_du_gram"));
  rom.res_du.onb_coeffs = matrix_from_json(j.at("res_du_onb"));
  rom.k_base_norm = j.at("k_base_norm").get<double>();
  rom.l_comp_dual_norms = j.at("l_comp_dual_norms").get<std::vector<double>>();
  rom.j_comp_dual_norms = j.at("j_comp_dual_norms").get<std::vector<double>>();
  return rom;
}

}  // namespace rbopt
