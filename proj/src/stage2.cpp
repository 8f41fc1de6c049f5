#include "rbopt/stage2.hpp"

#include <Eigen/SparseLU>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace rbopt {

namespace {

Vector element_nodal_values(const Patch& patch, const Vector& coarse) {
  Vector lambda(patch.n_shape());
  for (int j = 0; j < patch.n_shape(); ++j) lambda[j] = coarse[patch.coarse_basis[j]];
  return lambda;
}

// Coordinate tuple in the residual space: coarse block (function coords,
// metric S_coarse) plus one Euclidean block of size M_T per element.
struct WCoords {
  Vector coarse;
  std::vector<Vector> fine;
};

double w_inner(const SparseMatrix& s_coarse, const WCoords& a, const WCoords& b) {
  double out = a.coarse.dot(s_coarse * b.coarse);
  for (size_t t = 0; t < a.fine.size(); ++t) out += a.fine[t].dot(b.fine[t]);
  return out;
}

}  // namespace

RblodOperator build_rblod_operator(const LodSystem& lod,
                                   const std::vector<const Stage1Rom*>& stage1,
                                   const Vector& mu) {
  RblodOperator op;
  op.mu = mu;
  op.locals.reserve(stage1.size());
  std::vector<Eigen::Triplet<double>> triplets;
  for (size_t t = 0; t < stage1.size(); ++t) {
    const Patch& patch = lod.patches[t];
    op.locals.push_back(stage1_solve_all(*stage1[t], lod, mu));
    const Matrix& block = op.locals.back().k_block;
    for (int j = 0; j < patch.n_shape(); ++j)
      for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
        triplets.emplace_back(patch.coarse_rows[r], patch.coarse_basis[j],
                              block(static_cast<Eigen::Index>(r), j));
  }
  op.K.resize(lod.n_coarse_dofs(), lod.n_coarse_dofs());
  op.K.setFromTriplets(triplets.begin(), triplets.end());
  op.K.makeCompressed();
  return op;
}

Vector rblod_coarse_solve(const RblodOperator& op, const Vector& rhs) {
  Eigen::SparseLU<SparseMatrix> lu(op.K);
  if (lu.info() != Eigen::Success)
    throw SingularSystemError("rblod_coarse_solve: reduced multiscale matrix is singular");
  Vector sol = lu.solve(rhs);
  sol += lu.solve(rhs - op.K * sol);
  return sol;
}

std::vector<Vector> rblod_correctors(const LodSystem& lod,
                                     const std::vector<const Stage1Rom*>& stage1,
                                     const RblodOperator& op, const Vector& coarse) {
  std::vector<Vector> out(stage1.size());
  for (size_t t = 0; t < stage1.size(); ++t) {
    const Patch& patch = lod.patches[t];
    const Vector lambda = element_nodal_values(patch, coarse);
    out[t] = op.locals[t].coefficients.size() > 0
                 ? Vector(op.locals[t].coefficients * lambda)
                 : Vector::Zero(0);
  }
  return out;
}

double rblod_fine_residual2(const LodSystem& lod, const std::vector<const Stage1Rom*>& stage1,
                            const Vector& mu, const Vector& coarse,
                            const std::vector<Vector>& correctors) {
  double out = 0.0;
  for (size_t t = 0; t < stage1.size(); ++t) {
    const Patch& patch = lod.patches[t];
    const Vector lambda = element_nodal_values(patch, coarse);
    const Vector res = stage1[t]->residual_coordinates(lod.thetas, mu, lambda, correctors[t]);
    out += lod.constants.rho * res.squaredNorm();
  }
  return out;
}

Stage2Solution stage2_solve(const Stage2Rom& rom, const LodSystem& lod, const Vector& mu,
                            const Vector* primal_coeffs) {
  require(rom.dim() > 0, "stage2_solve: empty reduced space");
  const Eigen::Index M = rom.Ahat.front().rows();
  const Eigen::Index N = rom.dim();
  Matrix A = Matrix::Zero(M, N);
  for (size_t q = 0; q < rom.Ahat.size(); ++q) {
    const double t = lod.thetas[q](mu);
    if (t != 0.0) A += t * rom.Ahat[q];
  }
  Vector rhs;
  if (!rom.dual) {
    rhs = rom.Fhat;
  } else {
    require(primal_coeffs != nullptr, "stage2_solve: dual role requires the primal coefficients");
    rhs = Vector::Zero(M);
    for (size_t q = 0; q < rom.Fhat_j.size(); ++q) rhs += rom.Fhat_j[q];
    for (size_t q = 0; q < rom.Fhat_K.size(); ++q)
      rhs += 2.0 * (rom.Fhat_K[q] * (*primal_coeffs));
  }

  Stage2Solution sol;
  long active = 0;
  for (size_t q = 0; q < rom.Ahat.size(); ++q)
    if (lod.thetas[q](mu) != 0.0) ++active;
  sol.online_ops = active * M * N        // system assembly
                   + 2 * M * N * N + N * N * N  // least-squares factorization
                   + 2 * M * N + M;      // solution and residual
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  if (qr.rank() < N) {
    sol.rank_deficient = true;
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    sol.coeffs = svd.solve(rhs);
  } else {
    sol.coeffs = qr.solve(rhs);
  }
  sol.residual_norm = (rhs - A * sol.coeffs).norm();
  sol.eta_a = std::sqrt(5.0) / lod.constants.gamma_kl * sol.residual_norm;
  sol.coarse = rom.basis_coarse * sol.coeffs;
  return sol;
}

Stage2Builder::Stage2Builder(const LodSystem& lod, std::vector<const Stage1Rom*> stage1,
                             bool dual, const QuadraticObjective* objective,
                             const Stage2Rom* primal)
    : lod_(&lod), stage1_(std::move(stage1)), dual_(dual), objective_(objective),
      primal_(primal) {
  if (dual_) {
    require(objective_ != nullptr && primal_ != nullptr,
            "Stage2Builder: dual role requires the objective and the primal model");
  }
  s_coarse_.compute(lod.s_coarse);
  require(s_coarse_.info() == Eigen::Success, "Stage2Builder: coarse product factorization");
  basis_coarse_.resize(lod.n_coarse_dofs(), 0);
  basis_fine_.resize(stage1_.size());
  for (size_t t = 0; t < stage1_.size(); ++t)
    basis_fine_[t].resize(stage1_[t]->dim(), 0);
}

bool Stage2Builder::add_tuple(const Vector& coarse, const std::vector<Vector>& fine) {
  require(fine.size() == stage1_.size(), "Stage2Builder: tuple block count mismatch");
  // Gram-Schmidt in the two-scale H1 metric (coarse product + Euclidean
  // coefficients of the patch-orthonormal Stage-1 bases).
  Vector c = coarse;
  std::vector<Vector> f = fine;
  auto inner = [&](const Vector& c1, const std::vector<Vector>& f1, const Vector& c2,
                   const std::vector<Vector>& f2) {
    double out = c1.dot(lod_->s_coarse * c2);
    for (size_t t = 0; t < f1.size(); ++t)
      if (f1[t].size() > 0) out += f1[t].dot(f2[t]);
    return out;
  };
  const double norm0 = std::sqrt(std::max(0.0, inner(c, f, c, f)));
  if (norm0 == 0.0) return false;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index b = 0; b < basis_coarse_.cols(); ++b) {
      Vector bc = basis_coarse_.col(b);
      std::vector<Vector> bf(stage1_.size());
      for (size_t t = 0; t < stage1_.size(); ++t) bf[t] = basis_fine_[t].col(b);
      const double proj = inner(bc, bf, c, f);
      c -= proj * bc;
      for (size_t t = 0; t < stage1_.size(); ++t)
        if (f[t].size() > 0) f[t] -= proj * bf[t];
    }
  }
  const double norm1 = std::sqrt(std::max(0.0, inner(c, f, c, f)));
  if (norm1 < 1e-10 * norm0) return false;
  basis_coarse_.conservativeResize(Eigen::NoChange, basis_coarse_.cols() + 1);
  basis_coarse_.col(basis_coarse_.cols() - 1) = c / norm1;
  for (size_t t = 0; t < stage1_.size(); ++t) {
    basis_fine_[t].conservativeResize(Eigen::NoChange, basis_fine_[t].cols() + 1);
    if (f[t].size() > 0) basis_fine_[t].col(basis_fine_[t].cols() - 1) = f[t] / norm1;
  }
  return true;
}

bool Stage2Builder::add_snapshot(const Vector& mu, const Vector& rhs_coarse) {
  const RblodOperator op = build_rblod_operator(*lod_, stage1_, mu);
  const Vector u = rblod_coarse_solve(op, rhs_coarse);
  const std::vector<Vector> correctors = rblod_correctors(*lod_, stage1_, op, u);
  return add_tuple(u, correctors);
}

Stage2Rom Stage2Builder::assemble() const {
  Stage2Rom rom;
  rom.dual = dual_;
  rom.basis_coarse = basis_coarse_;
  rom.basis_fine = basis_fine_;
  const Eigen::Index N = basis_coarse_.cols();
  const size_t n_comp = lod_->thetas.size();

  // Generator tuples of the residual space in W coordinates.
  std::vector<WCoords> generators;
  std::vector<int> kind;  // 0: load, 1: B_q applied to basis n, 2: dual j, 3: dual K
  std::vector<std::pair<int, int>> meta;  // (component, basis index)

  auto empty_fine = [&]() {
    std::vector<Vector> f(stage1_.size());
    for (size_t t = 0; t < stage1_.size(); ++t)
      f[t] = Vector::Zero(stage1_[t]->residual_dim());
    return f;
  };

  if (!dual_) {
    WCoords g{s_coarse_.solve(lod_->l_coarse), empty_fine()};
    generators.push_back(std::move(g));
    kind.push_back(0);
    meta.emplace_back(-1, -1);
  } else {
    for (size_t q = 0; q < objective_->j.components.size(); ++q) {
      WCoords g{s_coarse_.solve(objective_->j.components[q]), empty_fine()};
      generators.push_back(std::move(g));
      kind.push_back(2);
      meta.emplace_back(static_cast<int>(q), -1);
    }
    for (size_t q = 0; q < objective_->k.components.size(); ++q)
      for (Eigen::Index n = 0; n < primal_->dim(); ++n) {
        WCoords g{s_coarse_.solve(objective_->k.components[q] * primal_->basis_coarse.col(n)),
                  empty_fine()};
        generators.push_back(std::move(g));
        kind.push_back(3);
        meta.emplace_back(static_cast<int>(q), static_cast<int>(n));
      }
  }

  const double sqrt_rho = std::sqrt(lod_->constants.rho);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (size_t q = 0; q < n_comp; ++q) {
      WCoords g;
      Vector coarse_raw = Vector::Zero(lod_->n_coarse_dofs());
      g.fine = empty_fine();
      for (size_t t = 0; t < stage1_.size(); ++t) {
        const Patch& patch = lod_->patches[t];
        const Vector lambda = element_nodal_values(patch, basis_coarse_.col(n));
        const Vector u_T = basis_fine_[t].col(n);
        Vector block = stage1_[t]->K0[q] * lambda;
        if (u_T.size() > 0) block -= stage1_[t]->Krb[q] * u_T;
        for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
          coarse_raw[patch.coarse_rows[r]] += block[static_cast<Eigen::Index>(r)];
        Vector fine_block = -(stage1_[t]->Ghat[q] * lambda);
        if (u_T.size() > 0) fine_block += stage1_[t]->Ahat[q] * u_T;
        g.fine[t] = sqrt_rho * fine_block;
      }
      g.coarse = s_coarse_.solve(coarse_raw);
      generators.push_back(std::move(g));
      kind.push_back(1);
      meta.emplace_back(static_cast<int>(q), static_cast<int>(n));
    }
  }

  // Orthonormalize the generators in the W metric.
  std::vector<WCoords> onb;
  std::vector<std::vector<double>> coords(generators.size());  // per generator: coords in onb
  for (size_t gidx = 0; gidx < generators.size(); ++gidx) {
    WCoords g = generators[gidx];
    const double norm0 = std::sqrt(std::max(0.0, w_inner(lod_->s_coarse, g, g)));
    std::vector<double> c(onb.size(), 0.0);
    for (int pass = 0; pass < 2; ++pass)
      for (size_t b = 0; b < onb.size(); ++b) {
        const double proj = w_inner(lod_->s_coarse, onb[b], g);
        c[b] += proj;
        g.coarse -= proj * onb[b].coarse;
        for (size_t t = 0; t < g.fine.size(); ++t) g.fine[t] -= proj * onb[b].fine[t];
      }
    const double norm1 = std::sqrt(std::max(0.0, w_inner(lod_->s_coarse, g, g)));
    if (norm0 > 0.0 && norm1 >= 1e-13 * norm0) {
      g.coarse /= norm1;
      for (auto& f : g.fine) f /= norm1;
      onb.push_back(g);
      c.push_back(norm1);
    }
    coords[gidx] = std::move(c);
  }
  const Eigen::Index M = static_cast<Eigen::Index>(onb.size());
  auto coords_vector = [&](size_t gidx) {
    Vector out = Vector::Zero(M);
    for (size_t b = 0; b < coords[gidx].size(); ++b)
      out[static_cast<Eigen::Index>(b)] = coords[gidx][b];
    return out;
  };

  rom.Ahat.assign(n_comp, Matrix::Zero(M, N));
  if (!dual_) rom.Fhat = Vector::Zero(M);
  if (dual_) {
    rom.Fhat_j.assign(objective_->j.components.size(), Vector::Zero(M));
    rom.Fhat_K.assign(objective_->k.components.size(), Matrix::Zero(M, primal_->dim()));
  }
  for (size_t gidx = 0; gidx < generators.size(); ++gidx) {
    const Vector c = coords_vector(gidx);
    switch (kind[gidx]) {
      case 0: rom.Fhat = c; break;
      case 1: rom.Ahat[static_cast<size_t>(meta[gidx].first)].col(meta[gidx].second) = c; break;
      case 2: rom.Fhat_j[static_cast<size_t>(meta[gidx].first)] = c; break;
      default: rom.Fhat_K[static_cast<size_t>(meta[gidx].first)].col(meta[gidx].second) = c;
    }
  }
  if (!dual_ && rom.Fhat.size() == 0) rom.Fhat = Vector::Zero(M);
  return rom;
}

Stage2GreedyResult stage2_greedy(const LodSystem& lod,
                                 const std::vector<const Stage1Rom*>& stage1,
                                 const std::vector<Vector>& training_set, double tol,
                                 int max_extensions) {
  require(!training_set.empty(), "stage2_greedy: empty training set");
  Stage2GreedyResult result;
  Stage2Builder builder(lod, stage1, false);

  // Initialization: the parameter maximizing the load-normalized residual of
  // the empty model; with a non-parametric load this is the first parameter.
  builder.add_snapshot(training_set.front(), lod.l_coarse);
  result.selected.push_back(training_set.front());
  result.rom = builder.assemble();

  for (int step = 0; step < max_extensions; ++step) {
    double worst = -1.0;
    Vector worst_mu;
    for (const auto& mu : training_set) {
      const Stage2Solution sol = stage2_solve(result.rom, lod, mu);
      if (sol.eta_a > worst) {
        worst = sol.eta_a;
        worst_mu = mu;
      }
    }
    result.max_estimates.push_back(worst);
    if (worst <= tol) {
      result.converged = true;
      return result;
    }
    for (const auto& prev : result.selected)
      if ((prev - worst_mu).norm() == 0.0) {
        // Stage-1 floor reached: the same parameter is selected twice.
        result.duplicate_abort = true;
        return result;
      }
    builder.add_snapshot(worst_mu, lod.l_coarse);
    result.selected.push_back(worst_mu);
    result.rom = builder.assemble();
  }
  return result;
}

namespace {

nlohmann::json matrix_blob(const Matrix& m) {
  nlohmann::json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return out;
}

Matrix matrix_unblob(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == m.size(), "rom blob: size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json matrices_blob(const std::vector<Matrix>& ms) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : ms) arr.push_back(matrix_blob(m));
  return arr;
}

std::vector<Matrix> matrices_unblob(const nlohmann::json& arr) {
  std::vector<Matrix> out;
  for (const auto& m : arr) out.push_back(matrix_unblob(m));
  return out;
}

}  // namespace

void save_stage1_rom(const Stage1Rom& rom, const std::string& path) {
  nlohmann::json j;
  j["format"] = "rbopt-stage1-rom";
  j["version"] = 1;
  j["element"] = rom.element;
  j["basis"] = matrix_blob(rom.basis);
  j["A_red"] = matrices_blob(rom.A_red);
  j["G_red"] = matrices_blob(rom.G_red);
  j["K0"] = matrices_blob(rom.K0);
  j["Krb"] = matrices_blob(rom.Krb);
  j["Ahat"] = matrices_blob(rom.Ahat);
  j["Ghat"] = matrices_blob(rom.Ghat);
  std::ofstream out(path);
  require(out.good(), "save_stage1_rom: cannot open " + path);
  out << j.dump();
}

Stage1Rom load_stage1_rom(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_stage1_rom: cannot open " + path);
  nlohmann::json j;
  in >> j;
  require(j.at("format") == "rbopt-stage1-rom", "load_stage1_rom: unexpected blob format");
  Stage1Rom rom;
  rom.element = j.at("element").get<int>();
  rom.basis = matrix_unblob(j.at("basis"));
  rom.A_red = matrices_unblob(j.at("A_red"));
  rom.G_red = matrices_unblob(j.at("G_red"));
  rom.K0 = matrices_unblob(j.at("K0"));
  rom.Krb = matrices_unblob(j.at("Krb"));
  rom.Ahat = matrices_unblob(j.at("Ahat"));
  rom.Ghat = matrices_unblob(j.at("Ghat"));
  return rom;
}

void save_stage2_rom(const Stage2Rom& rom, const std::string& path) {
  nlohmann::json j;
  j["format"] = "rbopt-stage2-rom";
  j["version"] = 1;
  j["dual"] = rom.dual;
  j["basis_coarse"] = matrix_blob(rom.basis_coarse);
  j["basis_fine"] = matrices_blob(rom.basis_fine);
  j["Ahat"] = matrices_blob(rom.Ahat);
  j["Fhat"] = std::vector<double>(rom.Fhat.data(), rom.Fhat.data() + rom.Fhat.size());
  nlohmann::json fj = nlohmann::json::array();
  for (const auto& v : rom.Fhat_j)
    fj.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  j["Fhat_j"] = fj;
  j["Fhat_K"] = matrices_blob(rom.Fhat_K);
  std::ofstream out(path);
  require(out.good(), "save_stage2_rom: cannot open " + path);
  out << j.dump();
}

Stage2Rom load_stage2_rom(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_stage2_rom: cannot open " + path);
  nlohmann::json j;
  in >> j;
  require(j.at("format") == "rbopt-stage2-rom", "load_stage2_rom: unexpected blob format");
  Stage2Rom rom;
  rom.dual = j.at("dual").get<bool>();
  rom.basis_coarse = matrix_unblob(j.at("basis_coarse"));
  rom.basis_fine = matrices_unblob(j.at("basis_fine"));
  rom.Ahat = matrices_unblob(j.at("Ahat"));
  const auto f = j.at("Fhat").get<std::vector<double>>();
  rom.Fhat = Eigen::Map<const Vector>(f.data(), static_cast<Eigen::Index>(f.size()));
  for (const auto& v : j.at("Fhat_j")) {
    const auto data = v.get<std::vector<double>>();
    rom.Fhat_j.push_back(
        Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size())));
  }
  rom.Fhat_K = matrices_unblob(j.at("Fhat_K"));
  return rom;
}

}  // namespace rbopt
