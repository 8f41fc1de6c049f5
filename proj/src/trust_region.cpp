#include "rbopt/trust_region.hpp"

#include <cmath>
#include <limits>

namespace rbopt {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void TrParams::validate() const {
  require(beta1 > 0 && beta1 < 1, "TrParams: beta1 must lie in (0,1)");
  require(beta2 > 0 && beta2 < 1, "TrParams: beta2 must lie in (0,1)");
  require(beta3 > 0 && beta3 < 1, "TrParams: beta3 must lie in (0,1)");
  require(eta_rho >= 0.75 && eta_rho < 1, "TrParams: eta_rho must lie in [3/4,1)");
  require(kappa > 0 && kappa < 1, "TrParams: kappa must lie in (0,1)");
  require(delta0 > 0, "TrParams: delta0 must be positive");
  if (relaxed) require(relax_decay > 0 && relax_decay < 1, "TrParams: relaxation must decay");
}

ArmijoResult armijo_backtrack(CertifiedModel& model, const ParameterBox& box, const Vector& mu,
                              double value_mu, const Vector& direction, double delta_eff,
                              const TrParams& params) {
  ArmijoResult result;
  double step = 1.0;
  for (int j = 0; j <= params.max_armijo; ++j, step *= params.kappa) {
    const Vector candidate = project_to_box(mu + step * direction, box);
    const double move2 = (candidate - mu).squaredNorm();
    if (move2 == 0.0) continue;  // active bound with outward direction
    const double value = model.value(candidate);
    if (value - value_mu > -(params.kappa_arm / step) * move2) continue;
    if (model.estimator_ratio(candidate) > delta_eff) continue;
    result.j = j;
    result.candidate = candidate;
    result.candidate_value = value;
    return result;
  }
  result.exhausted = true;
  result.candidate = mu;
  result.candidate_value = value_mu;
  return result;
}

ArmijoResult compute_agc(CertifiedModel& model, const ParameterBox& box, const Vector& mu,
                         double delta_eff, const TrParams& params) {
  const Vector g = model.gradient(mu);
  const double value_mu = model.value(mu);
  if (foc_measure(mu, g, box) <= params.tau_sub) {
    ArmijoResult stationary;
    stationary.j = 0;
    stationary.candidate = mu;
    stationary.candidate_value = value_mu;
    return stationary;
  }
  ArmijoResult result = armijo_backtrack(model, box, mu, value_mu, -g, delta_eff, params);
  if (result.exhausted) {
    result.candidate = mu;
    result.candidate_value = value_mu;
  }
  return result;
}

Matrix bfgs_inverse_update(const Matrix& Binv, const Vector& x, const Vector& y) {
  const double xy = x.dot(y);
  const Eigen::Index P = x.size();
  const Matrix left = Matrix::Identity(P, P) - x * y.transpose() / xy;
  return left * Binv * left.transpose() + x * x.transpose() / xy;
}

AcceptanceOutcome evaluate_acceptance(double value_plus, double delta_plus, double value_agc,
                                      double eps_cond) {
  if (value_plus + delta_plus < value_agc + eps_cond) return AcceptanceOutcome::Accept;
  if (value_plus - delta_plus > value_agc + eps_cond) return AcceptanceOutcome::Reject;
  return AcceptanceOutcome::NeedsFom;
}

double radius_after_acceptance(double delta, double rho, const TrParams& params) {
  if (params.enlarging && rho >= params.eta_rho) return delta / params.beta1;
  return delta;
}

bool skip_enrichment_flag(double q_next, double delta_next, double g_h, double g_r,
                          const Vector& fom_gradient, const Vector& rom_gradient,
                          const TrParams& params) {
  const bool c1 = q_next <= params.beta3 * delta_next;
  const bool c2 = g_r > 0.0 && std::abs(g_h - g_r) / g_r <= params.tau_g;
  const double grad_norm = fom_gradient.norm();
  const bool c3 = grad_norm > 0.0 && (fom_gradient - rom_gradient).norm() / grad_norm <=
                                         std::min(params.tau_grad, params.beta3 * delta_next);
  return c1 && c2 && c3;
}

namespace {

// Truncated CG on the epsilon-inactive block; active components take the
// projected-gradient direction.
Vector newton_cg_direction(CertifiedModel& model, const ParameterBox& box, const Vector& mu,
                           const Vector& g) {
  const Eigen::Index P = mu.size();
  const double eps = std::min(1e-8, foc_measure(mu, g, box));
  Eigen::ArrayXd active(P);
  for (Eigen::Index i = 0; i < P; ++i)
    active[i] = (box.upper[i] - mu[i] <= eps || mu[i] - box.lower[i] <= eps) ? 1.0 : 0.0;
  auto mask_inactive = [&](Vector v) {
    for (Eigen::Index i = 0; i < P; ++i)
      if (active[i] > 0.5) v[i] = 0.0;
    return v;
  };
  auto apply_reduced = [&](const Vector& v) {
    Vector out = model.hessian_vec(mu, mask_inactive(v));
    out = mask_inactive(out);
    for (Eigen::Index i = 0; i < P; ++i)
      if (active[i] > 0.5) out[i] = v[i];
    return out;
  };

  Vector d = Vector::Zero(P);
  Vector r = mask_inactive(-g);
  Vector p = r;
  double rr = r.squaredNorm();
  const double tol2 = 1e-12 * std::max(rr, 1e-30);
  for (int it = 0; it < 2 * static_cast<int>(P) && rr > tol2; ++it) {
    const Vector Hp = apply_reduced(p);
    const double curvature = p.dot(Hp);
    if (curvature <= 0.0) {
      if (it == 0) d = r;  // fall back to steepest descent
      break;
    }
    const double alpha = rr / curvature;
    d += alpha * p;
    r -= alpha * Hp;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  if (d.squaredNorm() == 0.0) d = mask_inactive(-g);
  for (Eigen::Index i = 0; i < P; ++i)
    if (active[i] > 0.5) d[i] = -g[i];
  if (g.dot(d) >= 0.0) d = -g;
  return d;
}

}  // namespace

SubProblemResult projected_descent_solve(CertifiedModel& model, const ParameterBox& box,
                                         const Vector& mu_start, double start_value,
                                         double delta_eff, const TrParams& params) {
  SubProblemResult result;
  result.mu = mu_start;
  result.value = start_value;
  const Eigen::Index P = mu_start.size();
  Matrix Binv = Matrix::Identity(P, P);
  Vector mu = mu_start;
  double value = start_value;
  Vector g = model.gradient(mu);

  for (int l = 0; l < params.max_sub_iterations; ++l) {
    result.mu = mu;
    result.value = value;
    result.iterations = l;
    if (foc_measure(mu, g, box) <= params.tau_sub) {
      result.termination = SubTermination::Foc;
      return result;
    }
    const double q = model.estimator_ratio(mu);
    if (q >= params.beta2 * delta_eff && q <= delta_eff) {
      result.termination = SubTermination::Boundary;
      return result;
    }
    Vector d;
    if (params.sub_solver == SubSolver::Bfgs) {
      d = -(Binv * g);
      if (g.dot(d) >= 0.0) {
        Binv = Matrix::Identity(P, P);
        d = -g;
      }
    } else {
      d = newton_cg_direction(model, box, mu, g);
    }
    const ArmijoResult step = armijo_backtrack(model, box, mu, value, d, delta_eff, params);
    if (step.exhausted) {
      result.termination = SubTermination::Stall;
      return result;
    }
    const Vector g_new = model.gradient(step.candidate);
    if (params.sub_solver == SubSolver::Bfgs) {
      const Vector x = step.candidate - mu;
      const Vector y = g_new - g;
      if (x.dot(y) <= 0.0) {
        Binv = Matrix::Identity(P, P);
        ++result.curvature_resets;
      } else {
        Binv = bfgs_inverse_update(Binv, x, y);
      }
    }
    mu = step.candidate;
    value = step.candidate_value;
    g = g_new;
  }
  result.mu = mu;
  result.value = value;
  result.iterations = params.max_sub_iterations;
  result.termination = SubTermination::MaxIter;
  return result;
}

TrustRegionState run_tr(CertifiedModel& model, const ParameterBox& box, const TrParams& params,
                        const Vector& mu0) {
  params.validate();
  TrustRegionState state;
  state.mu = project_to_box(mu0, box);
  state.delta = params.delta0;

  bool estimators_on = !params.relaxed || params.eps_tr(0) < params.relax_skip_threshold;
  model.set_estimators_enabled(estimators_on);

  model.enrich(state.mu);
  FomEvaluation fom_current = model.fom_value_and_gradient(state.mu);
  double g_h = foc_measure(state.mu, fom_current.gradient, box);
  {
    TrIterationRecord rec;
    rec.k = 0;
    rec.mu = state.mu;
    rec.delta = state.delta;
    rec.rom_value = model.value(state.mu);
    rec.fom_value = fom_current.value;
    rec.g_h = g_h;
    rec.q = model.estimator_ratio(state.mu);
    rec.decision = IterationDecision::Accepted;
    rec.fom_evaluated = true;
    rec.enriched = true;
    rec.fom_purpose = "enrichment";
    rec.basis = model.basis_summary();
    rec.fem_evals = model.counters().fem + model.counters().lod_coarse;
    state.history.push_back(rec);
  }
  if (g_h <= params.tau_foc) {
    state.converged = true;
    state.final_g_h = g_h;
    state.final_value = fom_current.value;
    state.termination_reason = "initial point is critical";
    state.counters = model.counters();
    return state;
  }

  int k = 0;
  bool last_accept_skipped = false;
  while (k < params.max_outer) {
    const double eps_tr = params.eps_tr(k);
    const double eps_cond = params.eps_cond(k);
    if (params.relaxed && !estimators_on && eps_tr < params.relax_skip_threshold) {
      estimators_on = true;
      model.set_estimators_enabled(true);
    }
    const double delta_eff = state.delta + eps_tr;

    const double value_k = model.value(state.mu);
    const ArmijoResult agc = compute_agc(model, box, state.mu, delta_eff, params);
    const SubProblemResult sub =
        projected_descent_solve(model, box, agc.candidate, agc.candidate_value, delta_eff,
                                params);
    const Vector mu_plus = sub.mu;
    const double value_plus = model.value(mu_plus);
    const double delta_plus = model.estimator_ratio(mu_plus) * std::abs(value_plus);
    const double value_agc = agc.candidate_value;

    TrIterationRecord rec;
    rec.k = k;
    rec.mu = mu_plus;
    rec.delta = state.delta;
    rec.rom_value = value_plus;
    rec.fom_value = kNaN;
    rec.g_h = kNaN;
    rec.q = model.estimator_ratio(mu_plus);
    rec.inner_iterations = sub.iterations;
    rec.sub_termination = sub.termination;

    auto shrink_radius = [&]() -> bool {
      state.delta *= params.beta1;
      if (state.delta < params.tau_machine) {
        state.termination_reason = "trust-region radius below machine precision";
        return false;
      }
      return true;
    };

    auto accept_common = [&](double fom_value_plus, const Vector& fom_grad_plus) -> bool {
      // Returns true when the outer loop should terminate (converged).
      g_h = foc_measure(mu_plus, fom_grad_plus, box);
      rec.fom_value = fom_value_plus;
      rec.g_h = g_h;
      const double predicted = value_k - value_plus;
      const double actual = fom_current.value - fom_value_plus;
      const double rho = predicted != 0.0 ? actual / predicted : 1.0;
      if (g_h <= params.tau_foc) {
        rec.decision = IterationDecision::Accepted;
        state.mu = mu_plus;
        state.converged = true;
        return true;
      }
      const double delta_next = radius_after_acceptance(state.delta, rho, params);
      bool skip = false;
      if (params.optional_enrichment && estimators_on) {
        const Vector rom_grad = model.gradient(mu_plus);
        const double g_r = foc_measure(mu_plus, rom_grad, box);
        skip = skip_enrichment_flag(model.estimator_ratio(mu_plus), delta_next, g_h, g_r,
                                    fom_grad_plus, rom_grad, params);
      }
      if (!skip) {
        model.enrich(mu_plus);
        rec.enriched = true;
      }
      last_accept_skipped = skip;
      rec.decision = skip ? IterationDecision::AcceptedSkippedEnrichment
                          : IterationDecision::Accepted;
      state.delta = delta_next;
      state.mu = mu_plus;
      fom_current = {fom_value_plus, fom_grad_plus};
      ++k;
      return false;
    };

    bool terminate = false;
    const AcceptanceOutcome outcome =
        evaluate_acceptance(value_plus, delta_plus, value_agc, eps_cond);
    if (outcome == AcceptanceOutcome::Accept) {
      // Sufficient condition holds: accept without the exact check.
      const FomEvaluation fom_plus = model.fom_value_and_gradient(mu_plus);
      rec.fom_evaluated = true;
      rec.fom_purpose = "foc-check";
      terminate = accept_common(fom_plus.value, fom_plus.gradient);
    } else if (outcome == AcceptanceOutcome::Reject) {
      // Necessary condition violated: reject cheaply.
      rec.decision = IterationDecision::Rejected;
      if (params.optional_enrichment && last_accept_skipped) {
        model.enrich(mu_plus);
        rec.enriched = true;
        rec.fom_evaluated = true;
        rec.fom_purpose = "enrichment";
        last_accept_skipped = false;
      }
      if (!shrink_radius()) {
        state.history.push_back(rec);
        break;
      }
    } else {
      // Estimator gap straddles the threshold: decide with the exact value.
      const FomEvaluation fom_plus = model.fom_value_and_gradient(mu_plus);
      rec.fom_evaluated = true;
      rec.fom_purpose = "acceptance";
      const double g_plus = foc_measure(mu_plus, fom_plus.gradient, box);
      if (g_plus <= params.tau_foc) {
        // The paid-for FOM data already certifies first-order criticality.
        rec.fom_value = fom_plus.value;
        rec.g_h = g_plus;
        rec.decision = IterationDecision::Accepted;
        state.mu = mu_plus;
        g_h = g_plus;
        fom_current = {fom_plus.value, fom_plus.gradient};
        state.converged = true;
        terminate = true;
      } else if (fom_plus.value <= value_agc + eps_cond) {
        terminate = accept_common(fom_plus.value, fom_plus.gradient);
      } else {
        rec.decision = IterationDecision::Rejected;
        rec.fom_value = fom_plus.value;
        rec.g_h = g_plus;
        if (params.fom_cost_oriented) {
          model.enrich(mu_plus);
          rec.enriched = true;
        }
        // Approximate-enrichment surrogates can stagnate once their
        // accuracy floor is reached: the sub-problem no longer moves and
        // shrinking the radius cannot help.
        if (!model.exact_at_snapshot() && (mu_plus - state.mu).norm() == 0.0) {
          state.termination_reason = "surrogate accuracy floor reached";
          state.history.push_back(rec);
          break;
        }
        if (!shrink_radius()) {
          state.history.push_back(rec);
          break;
        }
      }
    }
    rec.basis = model.basis_summary();
    rec.fem_evals = model.counters().fem + model.counters().lod_coarse;
    state.history.push_back(rec);
    if (terminate) break;
  }

  state.outer_iterations = k;
  state.final_g_h = g_h;
  state.final_value = fom_current.value;
  if (state.converged) {
    state.final_value = model.fom_value_and_gradient(state.mu).value;
    state.termination_reason = "first-order critical point reached";
  } else if (state.termination_reason.empty()) {
    state.termination_reason = "maximum number of outer iterations reached";
  }
  state.counters = model.counters();
  return state;
}

TrustRegionState parameter_control(
    CertifiedModel& model, const ParameterBox& box, TrParams params, TrustRegionState state,
    const std::function<ParameterEstimateResult(const Vector&, const Vector&)>& estimate_mu,
    int max_rounds) {
  require(params.tau_mu > 0.0, "parameter_control: tau_mu must be positive");
  for (int round = 0; round < max_rounds; ++round) {
    if (!state.converged) return state;
    const FomEvaluation fom = model.fom_value_and_gradient(state.mu);
    const ParameterEstimateResult est = estimate_mu(state.mu, fom.gradient);
    require(est.verified,
            "parameter_control: second-order condition not verified at the final iterate");
    if (est.value <= params.tau_mu) return state;
    params.tau_foc *= 1e-2;
    TrustRegionState refined = run_tr(model, box, params, state.mu);
    refined.parameter_control_rounds = state.parameter_control_rounds + 1;
    state = std::move(refined);
  }
  return state;
}

TrustRegionState fom_projected_bfgs(CertifiedModel& model, const ParameterBox& box,
                                    const TrParams& params, const Vector& mu0) {
  TrustRegionState state;
  state.mu = project_to_box(mu0, box);
  const Eigen::Index P = state.mu.size();
  Matrix Binv = Matrix::Identity(P, P);
  FomEvaluation eval = model.fom_value_and_gradient(state.mu);
  for (int k = 0; k < params.max_sub_iterations; ++k) {
    const double g = foc_measure(state.mu, eval.gradient, box);
    TrIterationRecord rec;
    rec.k = k;
    rec.mu = state.mu;
    rec.fom_value = eval.value;
    rec.g_h = g;
    rec.fom_evaluated = true;
    rec.fom_purpose = "foc-check";
    rec.decision = IterationDecision::Accepted;
    state.history.push_back(rec);
    state.outer_iterations = k;
    state.final_g_h = g;
    state.final_value = eval.value;
    if (g <= params.tau_foc) {
      state.converged = true;
      state.termination_reason = "first-order critical point reached";
      break;
    }
    Vector d = -(Binv * eval.gradient);
    if (eval.gradient.dot(d) >= 0.0) {
      Binv = Matrix::Identity(P, P);
      d = -eval.gradient;
    }
    // Armijo on the full-order values.
    double step = 1.0;
    bool moved = false;
    Vector candidate;
    FomEvaluation cand_eval;
    for (int j = 0; j <= params.max_armijo; ++j, step *= params.kappa) {
      candidate = project_to_box(state.mu + step * d, box);
      const double move2 = (candidate - state.mu).squaredNorm();
      if (move2 == 0.0) continue;
      cand_eval = model.fom_value_and_gradient(candidate);
      if (cand_eval.value - eval.value <= -(params.kappa_arm / step) * move2) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      state.termination_reason = "line search stalled";
      break;
    }
    const Vector x = candidate - state.mu;
    const Vector y = cand_eval.gradient - eval.gradient;
    if (x.dot(y) <= 0.0)
      Binv = Matrix::Identity(P, P);
    else
      Binv = bfgs_inverse_update(Binv, x, y);
    state.mu = candidate;
    eval = cand_eval;
  }
  state.counters = model.counters();
  if (state.termination_reason.empty())
    state.termination_reason = "maximum number of iterations reached";
  return state;
}

}  // namespace rbopt
