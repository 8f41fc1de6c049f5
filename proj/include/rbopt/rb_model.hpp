#pragma once

#include <optional>

#include "rbopt/certified_model.hpp"
#include "rbopt/global_rom.hpp"
#include "rbopt/trust_region.hpp"

namespace rbopt {

enum class EnrichmentStrategy { Lagrange, Aggregate, DirectionalTaylor };

/// CertifiedModel backed by the global reduced-basis model; the surrogate is
/// rebuilt after every enrichment. FOM evaluations at the latest parameter
/// are cached so acceptance checks and subsequent enrichments share one
/// solve.
class GlobalRbModel : public CertifiedModel {
 public:
  GlobalRbModel(const FomSystem& fom, RomVariant variant,
                EnrichmentStrategy strategy = EnrichmentStrategy::Lagrange, bool stable = true);

  double value(const Vector& mu) override;
  Vector gradient(const Vector& mu) override;
  double estimator_ratio(const Vector& mu) override;
  FomEvaluation fom_value_and_gradient(const Vector& mu) override;
  void enrich(const Vector& mu) override;
  bool exact_at_snapshot() const override { return true; }
  Vector hessian_vec(const Vector& mu, const Vector& eta) override;
  void set_estimators_enabled(bool enabled) override;
  EvalCounters& counters() override { return counters_; }
  std::string basis_summary() const override;

  const GlobalRom& rom() const;
  Eigen::Index basis_size() const { return v_pr_.dim(); }
  int discarded_snapshots() const { return discarded_; }

 private:
  const RomSolution& solution_at(const Vector& mu);
  GradientMode gradient_mode() const;
  void rebuild();

  const FomSystem* fom_;
  RomVariant variant_;
  EnrichmentStrategy strategy_;
  bool stable_;
  bool estimators_enabled_ = true;
  RbSpace v_pr_, v_du_;
  std::optional<GlobalRom> rom_;
  EvalCounters counters_;
  int discarded_ = 0;
  std::optional<RomSolution> sol_cache_;
  std::optional<FomSolution> fom_cache_;
};

/// CertifiedModel that evaluates the full-order model directly; the
/// estimator is identically zero. Reference methods and driver tests.
class ExactFomModel : public CertifiedModel {
 public:
  explicit ExactFomModel(const FomSystem& fom) : fom_(&fom) {}

  double value(const Vector& mu) override { return cached(mu).value; }
  Vector gradient(const Vector& mu) override { return cached(mu).gradient; }
  double estimator_ratio(const Vector&) override { return 0.0; }
  FomEvaluation fom_value_and_gradient(const Vector& mu) override {
    const FomSolution& sol = cached(mu);
    return {sol.value, sol.gradient};
  }
  void enrich(const Vector&) override {}
  bool exact_at_snapshot() const override { return true; }
  Vector hessian_vec(const Vector& mu, const Vector& eta) override {
    return fom_->hessian_vec(mu, eta);
  }
  EvalCounters& counters() override { return counters_; }

 private:
  const FomSolution& cached(const Vector& mu) {
    if (!cache_ || (cache_->mu - mu).norm() != 0.0) {
      cache_ = fom_->solve(mu);
      ++counters_.fem;
    }
    return *cache_;
  }
  const FomSystem* fom_;
  EvalCounters counters_;
  std::optional<FomSolution> cache_;
};

}  // namespace rbopt
