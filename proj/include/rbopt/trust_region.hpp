#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rbopt/certified_model.hpp"
#include "rbopt/params.hpp"

namespace rbopt {

enum class SubSolver { Bfgs, NewtonCg };

struct TrParams {
  double delta0 = 0.1;
  double beta1 = 0.5;        // radius shrink factor
  double beta2 = 0.95;       // boundary cut-off
  double beta3 = 0.5;        // skip-flag radius factor
  double eta_rho = 0.75;     // enlargement threshold
  double kappa = 0.5;        // Armijo backtracking factor
  double kappa_arm = 1e-4;   // Armijo slope constant
  double tau_sub = 1e-8;
  double tau_foc = 1e-6;
  double tau_g = 1e-2;       // skip flag: relative criticality mismatch
  double tau_grad = 1e-2;    // skip flag: relative gradient mismatch
  int max_outer = 40;
  int max_sub_iterations = 400;
  int max_armijo = 50;
  SubSolver sub_solver = SubSolver::Bfgs;
  bool optional_enrichment = false;
  bool fom_cost_oriented = false;   // reuse FOM data of rejected iterates
  bool enlarging = true;
  bool relaxed = false;
  // Relaxation sequences eps^(k) = relax_base * relax_decay^k (both TR and
  // acceptance); estimator assembly is skipped while eps_tr >= relax_skip.
  double relax_base = 1e10;
  double relax_decay = 0.1;
  double relax_skip_threshold = 1e4;
  double tau_mu = -1.0;              // parameter control tolerance; < 0 disables
  double tau_machine = 2.22e-16;     // safety stop for the radius

  double eps_tr(int k) const { return relaxed ? relax_base * std::pow(relax_decay, k) : 0.0; }
  double eps_cond(int k) const { return eps_tr(k); }

  void validate() const;
};

enum class SubTermination { Foc, Boundary, MaxIter, Stall };

enum class IterationDecision { Accepted, AcceptedSkippedEnrichment, Rejected };

struct TrIterationRecord {
  int k = 0;
  Vector mu;
  double delta = 0.0;
  double rom_value = 0.0;
  double fom_value = 0.0;  // NaN when no FOM data was computed
  double g_h = 0.0;        // NaN when no FOM data was computed
  double q = 0.0;
  int inner_iterations = 0;
  SubTermination sub_termination = SubTermination::Foc;
  IterationDecision decision = IterationDecision::Rejected;
  bool fom_evaluated = false;
  bool enriched = false;
  std::string fom_purpose;  // "enrichment", "acceptance", "foc-check"
  std::string basis;        // model basis summary after this iteration
  long fem_evals = 0;       // cumulative FOM-category count
};

struct TrustRegionState {
  Vector mu;
  double delta = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  double final_g_h = 0.0;
  double final_value = 0.0;
  std::vector<TrIterationRecord> history;
  EvalCounters counters;
  int parameter_control_rounds = 0;
  std::string termination_reason;
};

struct ArmijoResult {
  int j = -1;  // accepted backtracking index, -1 on exhaustion
  Vector candidate;
  double candidate_value = 0.0;
  bool exhausted = false;
};

/// Smallest j <= max_armijo with projected Armijo decrease and q <= delta_eff.
ArmijoResult armijo_backtrack(CertifiedModel& model, const ParameterBox& box, const Vector& mu,
                              double value_mu, const Vector& direction, double delta_eff,
                              const TrParams& params);

/// AGC point: first Armijo-accepted projected-gradient point.
ArmijoResult compute_agc(CertifiedModel& model, const ParameterBox& box, const Vector& mu,
                         double delta_eff, const TrParams& params);

struct SubProblemResult {
  Vector mu;
  double value = 0.0;
  int iterations = 0;
  int curvature_resets = 0;
  SubTermination termination = SubTermination::MaxIter;
};

/// Sherman-Morrison-Woodbury update of the inverse BFGS matrix.
Matrix bfgs_inverse_update(const Matrix& Binv, const Vector& x, const Vector& y);

enum class AcceptanceOutcome { Accept, Reject, NeedsFom };

/// Interval logic of the cheap acceptance test: accept when even the
/// estimator-pessimistic value beats the AGC value, reject when even the
/// optimistic one cannot, ask for the exact value otherwise.
AcceptanceOutcome evaluate_acceptance(double value_plus, double delta_plus, double value_agc,
                                      double eps_cond);

/// Radius update after an accepted iterate: enlarge by 1/beta1 when the
/// model-predicted reduction was realized (rho >= eta_rho).
double radius_after_acceptance(double delta, double rho, const TrParams& params);

/// Conjunction of the three skip conditions for the optional enrichment.
bool skip_enrichment_flag(double q_next, double delta_next, double g_h, double g_r,
                          const Vector& fom_gradient, const Vector& rom_gradient,
                          const TrParams& params);

/// Projected descent (BFGS or truncated Newton-CG) for the TR sub-problem.
SubProblemResult projected_descent_solve(CertifiedModel& model, const ParameterBox& box,
                                         const Vector& mu_start, double start_value,
                                         double delta_eff, const TrParams& params);

/// Error-aware trust-region driver.
TrustRegionState run_tr(CertifiedModel& model, const ParameterBox& box, const TrParams& params,
                        const Vector& mu0);

struct ParameterEstimateResult {
  bool verified = false;
  double value = 0.0;
};

/// Post-processing: while Delta_mu(mu_bar) > tau_mu, shrink tau_foc by two
/// orders of magnitude and resume the driver.
TrustRegionState parameter_control(
    CertifiedModel& model, const ParameterBox& box, TrParams params, TrustRegionState state,
    const std::function<ParameterEstimateResult(const Vector&, const Vector&)>& estimate_mu,
    int max_rounds = 3);

/// Plain projected BFGS on the full-order model (reference method).
TrustRegionState fom_projected_bfgs(CertifiedModel& model, const ParameterBox& box,
                                    const TrParams& params, const Vector& mu0);

}  // namespace rbopt
