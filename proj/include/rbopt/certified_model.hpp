#pragma once

#include <string>

#include "rbopt/params.hpp"

namespace rbopt {

/// Evaluation counters by cost category.
struct EvalCounters {
  long fem = 0;           // full FEM solves (primal/dual pair)
  long rb = 0;            // global reduced solves
  long lod_coarse = 0;    // coarse LOD solves with exact correctors
  long lod_local = 0;     // FOM corrector problems
  long rblod_coarse = 0;  // coarse solves with reduced correctors
  long rblod_local = 0;   // reduced corrector solves
  long tsrblod = 0;       // two-scale reduced solves
  long estimator_assemblies = 0;

  EvalCounters& operator+=(const EvalCounters& other) {
    fem += other.fem;
    rb += other.rb;
    lod_coarse += other.lod_coarse;
    lod_local += other.lod_local;
    rblod_coarse += other.rblod_coarse;
    rblod_local += other.rblod_local;
    tsrblod += other.tsrblod;
    estimator_assemblies += other.estimator_assemblies;
    return *this;
  }
};

struct FomEvaluation {
  double value = 0.0;
  Vector gradient;
};

/// Surrogate model contract for the trust-region driver: cheap value,
/// gradient and relative error estimate, plus full-order evaluation and
/// enrichment. Implementations update the shared counters.
class CertifiedModel {
 public:
  virtual ~CertifiedModel() = default;

  virtual double value(const Vector& mu) = 0;
  virtual Vector gradient(const Vector& mu) = 0;

  /// q(mu) = Delta_J(mu) / J_r(mu); zero while estimators are disabled.
  virtual double estimator_ratio(const Vector& mu) = 0;

  /// Full-order value and gradient (counted in the FOM category). Results
  /// for the most recent mu are cached so repeated queries are free.
  virtual FomEvaluation fom_value_and_gradient(const Vector& mu) = 0;

  virtual void enrich(const Vector& mu) = 0;

  /// True when enrich(mu) makes the surrogate exact at mu (global RB);
  /// localized models with tau_loc > 0 enrich only approximately.
  virtual bool exact_at_snapshot() const = 0;

  /// Hessian action for the Newton sub-problem solver; optional.
  virtual Vector hessian_vec(const Vector&, const Vector&) {
    throw std::logic_error("CertifiedModel: Hessian action not provided");
  }

  virtual void set_estimators_enabled(bool) {}
  virtual EvalCounters& counters() = 0;
  virtual std::string basis_summary() const { return std::string(); }
};

}  // namespace rbopt
