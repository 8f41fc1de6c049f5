#pragma once

#include <memory>
#include <optional>

#include "rbopt/certified_model.hpp"
#include "rbopt/stage2.hpp"

namespace rbopt {

enum class LocalizedVariant { Rblod, Tsrblod };

struct LocalEnrichmentReport {
  Vector mu;
  int elements_enriched = 0;
  int elements_skipped = 0;
  int snapshots_added = 0;
};

struct LocalizedEstimates {
  double value = 0.0;
  Vector gradient;
  double delta_pr = 0.0;
  double delta_du = 0.0;
  double delta_trunc = 0.0;
  double delta_j = 0.0;
};

/// CertifiedModel over the localized LOD reductions: Stage-1 corrector ROMs
/// per element, optionally the Stage-2 two-scale ROM pair (primal/dual).
/// The full-order model is the PG-LOD itself.
class LocalizedLodModel : public CertifiedModel {
 public:
  LocalizedLodModel(const LodSystem& lod, const LodObjective& objective,
                    LocalizedVariant variant, double tau_loc);

  double value(const Vector& mu) override;
  Vector gradient(const Vector& mu) override;
  double estimator_ratio(const Vector& mu) override;
  FomEvaluation fom_value_and_gradient(const Vector& mu) override;
  void enrich(const Vector& mu) override;
  bool exact_at_snapshot() const override { return false; }
  void set_estimators_enabled(bool enabled) override { estimators_enabled_ = enabled; }
  EvalCounters& counters() override { return counters_; }
  std::string basis_summary() const override;

  /// Reduced value, gradient and the estimator chain at mu.
  LocalizedEstimates estimates(const Vector& mu);

  const std::vector<LocalEnrichmentReport>& enrichment_reports() const { return reports_; }
  const std::vector<Vector>& history() const { return history_; }
  std::vector<const Stage1Rom*> stage1_roms() const;
  double k_coarse_norm() const { return k_norm_coarse_; }

 private:
  struct ReducedSolution {
    Vector mu;
    Vector u_coarse, p_coarse;
    std::vector<Vector> u_correctors, p_correctors;  // rblod variant
    std::optional<Stage2Solution> primal, dual;      // tsrblod variant
    double value = 0.0;
  };

  const ReducedSolution& reduced_at(const Vector& mu);
  Vector reduced_gradient(const ReducedSolution& sol) const;
  void rebuild_stage2();

  const LodSystem* lod_;
  LodObjective objective_;
  LocalizedVariant variant_;
  double tau_loc_;
  bool estimators_enabled_ = true;
  double k_norm_coarse_ = 0.0;

  std::vector<std::unique_ptr<Stage1Builder>> builders_;
  std::optional<Stage2Rom> stage2_primal_, stage2_dual_;
  std::vector<Vector> history_;
  std::vector<LocalEnrichmentReport> reports_;
  Eigen::SimplicialLDLT<SparseMatrix> s_coarse_;

  EvalCounters counters_;
  std::optional<ReducedSolution> cache_;
  std::optional<LodSolution> fom_cache_;
};

}  // namespace rbopt
