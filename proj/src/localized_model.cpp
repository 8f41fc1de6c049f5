#include "rbopt/localized_model.hpp"

#include <cmath>
#include <sstream>

namespace rbopt {

namespace {
// Largest eigenvalue of S^-1 K by power iteration (continuity of the coarse
// objective bilinear form w.r.t. the coarse H1 seminorm).
double coarse_operator_norm(const SparseMatrix& K, const SparseMatrix& S,
                            const Eigen::SimplicialLDLT<SparseMatrix>& S_solver) {
  if (K.rows() == 0) return 0.0;
  Vector v = Vector::Ones(K.rows());
  v /= std::sqrt(v.dot(S * v));
  double lambda = 0.0;
  for (int it = 0; it < 300; ++it) {
    Vector w = S_solver.solve(K * v);
    const double nw = std::sqrt(std::max(0.0, w.dot(S * w)));
    if (nw == 0.0) return 0.0;
    w /= nw;
    const double next = w.dot(K * w) / w.dot(S * w);
    if (std::abs(next - lambda) <= 1e-13 * std::max(1.0, std::abs(next)) && it > 5) {
      lambda = next;
      break;
    }
    lambda = next;
    v = w;
  }
  return std::abs(lambda) * (1.0 + 1e-8);
}
}  // namespace

LocalizedLodModel::LocalizedLodModel(const LodSystem& lod, const LodObjective& objective,
                                     LocalizedVariant variant, double tau_loc)
    : lod_(&lod), objective_(objective), variant_(variant), tau_loc_(tau_loc) {
  for (int t = 0; t < lod.n_elements(); ++t)
    builders_.push_back(std::make_unique<Stage1Builder>(lod, t));
  s_coarse_.compute(lod.s_coarse);
  require(s_coarse_.info() == Eigen::Success, "LocalizedLodModel: coarse product");
  k_norm_coarse_ = 0.0;
  for (const auto& Kq : objective_.coarse.k.components)
    k_norm_coarse_ = std::max(k_norm_coarse_, coarse_operator_norm(Kq, lod.s_coarse, s_coarse_));
}

std::vector<const Stage1Rom*> LocalizedLodModel::stage1_roms() const {
  std::vector<const Stage1Rom*> out;
  out.reserve(builders_.size());
  for (const auto& b : builders_) out.push_back(&b->rom());
  return out;
}

const LocalizedLodModel::ReducedSolution& LocalizedLodModel::reduced_at(const Vector& mu) {
  if (cache_ && (cache_->mu - mu).norm() == 0.0) return *cache_;
  ReducedSolution sol;
  sol.mu = mu;
  const auto stage1 = stage1_roms();
  if (variant_ == LocalizedVariant::Rblod) {
    const RblodOperator op = build_rblod_operator(*lod_, stage1, mu);
    counters_.rblod_local += static_cast<long>(lod_->patches.size());
    sol.u_coarse = rblod_coarse_solve(op, lod_->l_coarse);
    sol.p_coarse = rblod_coarse_solve(op, objective_.coarse.state_derivative(mu, sol.u_coarse));
    counters_.rblod_coarse += 2;
    sol.u_correctors = rblod_correctors(*lod_, stage1, op, sol.u_coarse);
    sol.p_correctors = rblod_correctors(*lod_, stage1, op, sol.p_coarse);
  } else {
    require(stage2_primal_.has_value(),
            "LocalizedLodModel: Stage-2 model not built (enrich first)");
    sol.primal = stage2_solve(*stage2_primal_, *lod_, mu);
    sol.u_coarse = sol.primal->coarse;
    sol.dual = stage2_solve(*stage2_dual_, *lod_, mu, &sol.primal->coeffs);
    sol.p_coarse = sol.dual->coarse;
    counters_.tsrblod += 2;
  }
  sol.value = objective_.coarse.value(mu, sol.u_coarse);
  cache_ = std::move(sol);
  return *cache_;
}

Vector LocalizedLodModel::reduced_gradient(const ReducedSolution& sol) const {
  const int P = static_cast<int>(sol.mu.size());
  Vector grad = objective_.coarse.mu_gradient(sol.mu, sol.u_coarse);
  for (int i = 0; i < P; ++i)
    for (size_t q = 0; q < lod_->a_coarse.size(); ++q) {
      const double t = lod_->thetas[q].d(sol.mu, i);
      if (t != 0.0) grad[i] -= t * sol.p_coarse.dot(lod_->a_coarse[q] * sol.u_coarse);
    }
  return grad;
}

double LocalizedLodModel::value(const Vector& mu) { return reduced_at(mu).value; }

Vector LocalizedLodModel::gradient(const Vector& mu) { return reduced_gradient(reduced_at(mu)); }

LocalizedEstimates LocalizedLodModel::estimates(const Vector& mu) {
  const ReducedSolution& sol = reduced_at(mu);
  LocalizedEstimates est;
  est.value = sol.value;
  est.gradient = reduced_gradient(sol);

  const auto stage1 = stage1_roms();
  const double sqrt5_over_gamma = std::sqrt(5.0) / lod_->constants.gamma_kl;
  double eta_pr = 0.0, eta_du = 0.0;
  if (variant_ == LocalizedVariant::Rblod) {
    // Two-scale residual of the RBLOD tuple; the coarse block vanishes up to
    // solver precision, the fine blocks are the Stage-1 residuals.
    const double fine_pr =
        rblod_fine_residual2(*lod_, stage1, mu, sol.u_coarse, sol.u_correctors);
    const double fine_du =
        rblod_fine_residual2(*lod_, stage1, mu, sol.p_coarse, sol.p_correctors);
    eta_pr = sqrt5_over_gamma * std::sqrt(fine_pr);
    eta_du = sqrt5_over_gamma * std::sqrt(fine_du);
  } else {
    eta_pr = sol.primal->eta_a;
    eta_du = sol.dual->eta_a;
  }

  const double alpha = lod_->constants.alpha;
  const double c_fine = 1.0 / std::sqrt(alpha);  // |e|_1 <= alpha^(-1/2) ||e||_A
  est.delta_pr = eta_pr;
  est.delta_du = sqrt5_over_gamma * 2.0 * k_norm_coarse_ * lod_->constants.C_IH * c_fine *
                     eta_pr +
                 eta_du;
  const double p_h1 = std::sqrt(std::max(0.0, sol.p_coarse.dot(lod_->s_coarse * sol.p_coarse)));
  est.delta_trunc = est.delta_pr * eta_du + c_fine * p_h1 * eta_pr;
  est.delta_j = (c_fine * est.delta_pr) * eta_du +
                k_norm_coarse_ * std::pow(c_fine * est.delta_pr, 2) + est.delta_trunc;
  return est;
}

double LocalizedLodModel::estimator_ratio(const Vector& mu) {
  if (!estimators_enabled_) return 0.0;
  const LocalizedEstimates est = estimates(mu);
  return est.delta_j / std::abs(est.value);
}

FomEvaluation LocalizedLodModel::fom_value_and_gradient(const Vector& mu) {
  if (!fom_cache_ || (fom_cache_->mu - mu).norm() != 0.0) {
    fom_cache_ = lod_objective_and_gradient(*lod_, objective_, mu);
    counters_.lod_coarse += 2;
    for (const auto& patch : lod_->patches) counters_.lod_local += patch.n_shape();
  }
  return {fom_cache_->value, fom_cache_->gradient};
}

void LocalizedLodModel::enrich(const Vector& mu) {
  LocalEnrichmentReport report;
  report.mu = mu;
  const int J_max = 4;
  for (auto& builder : builders_) {
    const Stage1Rom& rom = builder->rom();
    const Patch& patch = lod_->patches[rom.element];
    const int J = patch.n_shape();
    bool enriched_here = false;
    for (int round = 0; round < J_max * 2; ++round) {
      // Current worst shape-function estimate on this element.
      Matrix coeffs = Matrix::Zero(rom.dim(), J);
      if (rom.dim() > 0) {
        coeffs = rom.reduced_operator(lod_->thetas, mu)
                     .ldlt()
                     .solve(rom.reduced_rhs(lod_->thetas, mu));
      }
      double worst = -1.0;
      int worst_shape = 0;
      for (int j = 0; j < J; ++j) {
        Vector lambda = Vector::Zero(J);
        lambda[j] = 1.0;
        const double eta = stage1_estimate(rom, *lod_, mu, lambda, coeffs.col(j));
        if (eta > worst) {
          worst = eta;
          worst_shape = j;
        }
      }
      if (worst <= std::max(tau_loc_, 1e-10)) break;
      builder->extend(mu, worst_shape);
      ++counters_.lod_local;
      ++report.snapshots_added;
      enriched_here = true;
      if (builder->rom().dim() >= patch.n_dofs()) break;
    }
    if (enriched_here)
      ++report.elements_enriched;
    else
      ++report.elements_skipped;
  }
  history_.push_back(mu);
  reports_.push_back(report);
  if (variant_ == LocalizedVariant::Tsrblod) rebuild_stage2();
  cache_.reset();
}

void LocalizedLodModel::rebuild_stage2() {
  const auto stage1 = stage1_roms();
  // Stage 2 is rebuilt from scratch over the full iterate history.
  Stage2Builder primal(*lod_, stage1, false);
  for (const auto& mu : history_) {
    primal.add_snapshot(mu, lod_->l_coarse);
    counters_.rblod_coarse += 1;
    counters_.rblod_local += static_cast<long>(lod_->patches.size());
  }
  stage2_primal_ = primal.assemble();

  Stage2Builder dual(*lod_, stage1, true, &objective_.coarse, &*stage2_primal_);
  for (const auto& mu : history_) {
    const RblodOperator op = build_rblod_operator(*lod_, stage1, mu);
    counters_.rblod_local += static_cast<long>(lod_->patches.size());
    const Vector u = rblod_coarse_solve(op, lod_->l_coarse);
    const Vector p = rblod_coarse_solve(op, objective_.coarse.state_derivative(mu, u));
    counters_.rblod_coarse += 2;
    dual.add_tuple(p, rblod_correctors(*lod_, stage1, op, p));
  }
  stage2_dual_ = dual.assemble();
  if (estimators_enabled_) ++counters_.estimator_assemblies;
}

std::string LocalizedLodModel::basis_summary() const {
  Eigen::Index total = 0, max_n = 0;
  for (const auto& b : builders_) {
    total += b->rom().dim();
    max_n = std::max(max_n, b->rom().dim());
  }
  std::ostringstream out;
  out << "stage1 total=" << total << " max=" << max_n;
  if (stage2_primal_) out << " stage2 N=" << stage2_primal_->dim();
  return out.str();
}

}  // namespace rbopt
