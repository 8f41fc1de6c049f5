#include "rbopt/rb_model.hpp"

#include <sstream>

namespace rbopt {

GlobalRbModel::GlobalRbModel(const FomSystem& fom, RomVariant variant,
                             EnrichmentStrategy strategy, bool stable)
    : fom_(&fom), variant_(variant), strategy_(strategy), stable_(stable) {}

GradientMode GlobalRbModel::gradient_mode() const {
  switch (variant_) {
    case RomVariant::Standard: return GradientMode::Inexact;
    case RomVariant::PetrovGalerkin: return GradientMode::Pg;
    default: return GradientMode::NcdAdjoint;
  }
}

const RomSolution& GlobalRbModel::solution_at(const Vector& mu) {
  require(rom_.has_value(), "GlobalRbModel: model has not been initialized (enrich first)");
  if (!sol_cache_ || (sol_cache_->mu - mu).norm() != 0.0) {
    sol_cache_ = rom_solve(*rom_, mu);
    ++counters_.rb;
  }
  return *sol_cache_;
}

double GlobalRbModel::value(const Vector& mu) { return solution_at(mu).value; }

Vector GlobalRbModel::gradient(const Vector& mu) {
  const RomSolution& sol = solution_at(mu);
  return rom_gradient(*rom_, sol, gradient_mode());
}

double GlobalRbModel::estimator_ratio(const Vector& mu) {
  if (!estimators_enabled_ || !rom_ || !rom_->estimators_built) return 0.0;
  const RomSolution& sol = solution_at(mu);
  const EstimatorQuantity quantity =
      variant_ == RomVariant::Standard
          ? EstimatorQuantity::Functional
          : (variant_ == RomVariant::PetrovGalerkin ? EstimatorQuantity::PgFunctional
                                                    : EstimatorQuantity::FunctionalNcd);
  return estimate(*rom_, sol, quantity) / std::abs(sol.value);
}

FomEvaluation GlobalRbModel::fom_value_and_gradient(const Vector& mu) {
  if (!fom_cache_ || (fom_cache_->mu - mu).norm() != 0.0) {
    fom_cache_ = fom_->solve(mu);
    ++counters_.fem;
  }
  return {fom_cache_->value, fom_cache_->gradient};
}

void GlobalRbModel::enrich(const Vector& mu) {
  if (!fom_cache_ || (fom_cache_->mu - mu).norm() != 0.0) {
    fom_cache_ = fom_->solve(mu);
    ++counters_.fem;
  }
  const FomSolution& snap = *fom_cache_;
  int before = static_cast<int>(v_pr_.dim() + v_du_.dim());
  int attempted = 0;
  switch (strategy_) {
    case EnrichmentStrategy::Lagrange:
      extend_basis(v_pr_, snap.u, fom_->product);
      extend_basis(v_du_, snap.p, fom_->product);
      attempted = 2;
      break;
    case EnrichmentStrategy::Aggregate: {
      Matrix both(fom_->n_dofs(), 2);
      both.col(0) = snap.u;
      both.col(1) = snap.p;
      extend_basis(v_pr_, both, fom_->product);
      extend_basis(v_du_, both, fom_->product);
      attempted = 4;
      break;
    }
    case EnrichmentStrategy::DirectionalTaylor: {
      const Vector eta = snap.gradient;
      const Vector du = fom_->solve_sensitivity(mu, eta, SensitivityKind::Primal, snap.u);
      const Vector dp =
          fom_->solve_sensitivity(mu, eta, SensitivityKind::Dual, snap.u, snap.p, du);
      Matrix pr(fom_->n_dofs(), 2), du_mat(fom_->n_dofs(), 2);
      pr.col(0) = snap.u;
      pr.col(1) = du;
      du_mat.col(0) = snap.p;
      du_mat.col(1) = dp;
      extend_basis(v_pr_, pr, fom_->product);
      extend_basis(v_du_, du_mat, fom_->product);
      attempted = 4;
      break;
    }
  }
  discarded_ += attempted - (static_cast<int>(v_pr_.dim() + v_du_.dim()) - before);
  rebuild();
}

void GlobalRbModel::rebuild() {
  rom_ = build_rom(*fom_, v_pr_, v_du_, variant_, stable_, estimators_enabled_);
  if (estimators_enabled_) ++counters_.estimator_assemblies;
  sol_cache_.reset();
}

Vector GlobalRbModel::hessian_vec(const Vector& mu, const Vector& eta) {
  const RomSolution& sol = solution_at(mu);
  return rom_hessian_vec(*rom_, sol, eta);
}

void GlobalRbModel::set_estimators_enabled(bool enabled) {
  if (enabled == estimators_enabled_) return;
  estimators_enabled_ = enabled;
  if (enabled && rom_ && !rom_->estimators_built) {
    build_estimator_data(*rom_);
    ++counters_.estimator_assemblies;
    sol_cache_.reset();
  }
}

const GlobalRom& GlobalRbModel::rom() const {
  require(rom_.has_value(), "GlobalRbModel: model has not been initialized");
  return *rom_;
}

std::string GlobalRbModel::basis_summary() const {
  std::ostringstream out;
  out << "pr=" << v_pr_.dim() << " du=" << v_du_.dim();
  return out.str();
}

}  // namespace rbopt
