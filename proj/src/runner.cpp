#include "rbopt/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rbopt/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rbopt {

namespace {

Vector seeded_draw(const ParameterBox& box, uint64_t seed, uint64_t tag, double margin = 0.0) {
  CounterRng rng{seed};
  Vector mu(box.dim());
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    const double width = box.upper[i] - box.lower[i];
    mu[i] = rng.uniform(box.lower[i] + margin * width, box.upper[i] - margin * width, tag,
                        static_cast<uint64_t>(i));
  }
  return mu;
}

ParameterBox benchmark_box(const ProblemConfig& problem) {
  if (problem.mu_lower.size() > 0) {
    require(problem.mu_lower.size() == problem.mu_upper.size(),
            "problem: mu_lower/mu_upper dimension mismatch");
    return ParameterBox{problem.mu_lower, problem.mu_upper};
  }
  const int per_field = problem.blocks * problem.blocks;
  const int P = per_field * problem.n_fields;
  Vector lo(P), hi(P);
  for (int f = 0; f < problem.n_fields; ++f)
    for (int b = 0; b < per_field; ++b) {
      const int i = f * per_field + b;
      // Second-field blocks move in a narrow band; for the 4x4 layout the
      // four center blocks of each field are the low-conductivity ones.
      bool narrow = f == 1;
      if (problem.blocks == 4) {
        const int bx = b % 4, by = b / 4;
        narrow = (bx == 1 || bx == 2) && (by == 1 || by == 2);
      }
      lo[i] = 1.0;
      hi[i] = narrow ? 1.2 : 4.0;
    }
  return ParameterBox{lo, hi};
}

Vector benchmark_mu_d(const ProblemConfig& problem, const ParameterBox& box) {
  if (problem.mu_d.size() > 0) {
    require(problem.mu_d.size() == box.dim(), "problem: mu_d dimension mismatch");
    return problem.mu_d;
  }
  if (problem.benchmark == "B1") return seeded_draw(box, problem.seed, 101, 0.2);
  // Multiscale benchmarks mimic active bounds on a deterministic subset.
  CounterRng rng{problem.seed};
  Vector mu = seeded_draw(box, problem.seed, 102, 0.0);
  for (Eigen::Index i = 0; i < box.dim(); ++i)
    if (rng.uniform01(103, static_cast<uint64_t>(i)) < 0.25) mu[i] = box.upper[i];
  return mu;
}

QuadraticObjective misfit_objective(const SparseMatrix& mass, const Vector& u_d, double sigma_d,
                                    const Vector& sigma_i, const Vector& mu_d) {
  QuadraticObjective obj;
  const double misfit_const = 0.5 * sigma_d * u_d.dot(mass * u_d) + 1.0;
  obj.theta = [=](const Vector& mu) {
    return 0.5 * (sigma_i.array() * (mu - mu_d).array().square()).sum() + misfit_const;
  };
  obj.theta_gradient = [=](const Vector& mu) -> Vector {
    return (sigma_i.array() * (mu - mu_d).array()).matrix();
  };
  obj.theta_hessian = [=](const Vector&) -> Matrix { return sigma_i.asDiagonal(); };
  obj.j.components.push_back(-sigma_d * (mass * u_d));
  obj.j.thetas.push_back(ThetaFunction::constant(1.0));
  obj.k.components.push_back(SparseMatrix(0.5 * sigma_d * mass));
  obj.k.thetas.push_back(ThetaFunction::constant(1.0));
  return obj;
}

// Minimal certified-model facade for the PG-LOD reference method (no
// reduced spaces are ever built).
class PglodFomModel : public CertifiedModel {
 public:
  PglodFomModel(const LodSystem& lod, const LodObjective& objective)
      : lod_(&lod), objective_(objective) {}
  double value(const Vector& mu) override { return fom_value_and_gradient(mu).value; }
  Vector gradient(const Vector& mu) override { return fom_value_and_gradient(mu).gradient; }
  double estimator_ratio(const Vector&) override { return 0.0; }
  FomEvaluation fom_value_and_gradient(const Vector& mu) override {
    if (!cache_ || (cache_->mu - mu).norm() != 0.0) {
      cache_ = lod_objective_and_gradient(*lod_, objective_, mu);
      counters_.lod_coarse += 2;
      for (const auto& patch : lod_->patches) counters_.lod_local += patch.n_shape();
    }
    return {cache_->value, cache_->gradient};
  }
  void enrich(const Vector&) override {}
  bool exact_at_snapshot() const override { return true; }
  EvalCounters& counters() override { return counters_; }

 private:
  const LodSystem* lod_;
  LodObjective objective_;
  EvalCounters counters_;
  std::optional<LodSolution> cache_;
};

}  // namespace

ProblemConfig apply_benchmark_defaults(ProblemConfig problem) {
  if (problem.benchmark == "B1") {
    problem.blocks = 2;  // 2 x 1 layout is realized through one field pair below
    problem.n_fields = 1;
    if (problem.n_h <= 0) problem.n_h = 64;
  } else if (problem.benchmark == "B2") {
    problem.blocks = 2;
    problem.n_fields = 2;
  } else if (problem.benchmark == "B3") {
    problem.blocks = 4;
    problem.n_fields = 2;
  }
  return problem;
}

BenchmarkProblem build_problem(const ProblemConfig& raw, bool lod_flavor) {
  const ProblemConfig problem = apply_benchmark_defaults(raw);
  BenchmarkProblem out;

  out.spec.seed = problem.seed;
  if (problem.benchmark == "B1") {
    out.spec.blocks_x = 2;
    out.spec.blocks_y = 1;
    out.spec.fields.push_back(
        {problem.field_resolution, FieldLaw::Uniform, 0.9, 1.1});
    Vector lo = Vector::Constant(2, 0.1), hi = Vector::Constant(2, 4.0);
    if (problem.mu_lower.size() > 0) {
      lo = problem.mu_lower;
      hi = problem.mu_upper;
    }
    out.box = ParameterBox{lo, hi};
  } else {
    out.spec.blocks_x = problem.blocks;
    out.spec.blocks_y = problem.blocks;
    for (int f = 0; f < problem.n_fields; ++f)
      out.spec.fields.push_back({problem.field_resolution * (f + 1),
                                 f == 0 ? FieldLaw::Uniform : FieldLaw::Normal, 0.9, 1.1});
    out.box = benchmark_box(problem);
  }
  require(out.box.dim() == out.spec.parameter_dim(), "benchmark: parameter dim mismatch");
  out.mu_d = benchmark_mu_d(problem, out.box);
  out.mu_0 = problem.mu_0.size() > 0 ? problem.mu_0 : seeded_draw(out.box, problem.seed, 11);
  const Vector sigma_i = Vector::Constant(out.box.dim(), problem.sigma_i);

  if (!lod_flavor) {
    FomSystem fem;
    fem.grid = build_grid(problem.n_h);
    fem.a = build_thermal_block(fem.grid, out.spec);
    fem.l.components.push_back(assemble_rhs(fem.grid, PiecewiseConstantField::constant(10.0)));
    fem.l.thetas.push_back(ThetaFunction::constant(1.0));
    fem.box = out.box;
    fem.mu_bar = out.box.midpoint();
    fem.finalize();
    const Vector u_d = fem.solve_primal(out.mu_d);
    fem.objective = misfit_objective(fem.l2_mass, u_d, problem.sigma_d, sigma_i, out.mu_d);
    out.fem = std::move(fem);
    return out;
  }

  // LOD flavor: restricted block fields become the affine components.
  std::vector<PiecewiseConstantField> fields;
  std::vector<ThetaFunction> thetas;
  int q = 0;
  for (int f = 0; f < static_cast<int>(out.spec.fields.size()); ++f) {
    const PiecewiseConstantField field = build_block_field(out.spec, f);
    for (int by = 0; by < out.spec.blocks_y; ++by)
      for (int bx = 0; bx < out.spec.blocks_x; ++bx) {
        fields.push_back(restrict_to_block(field, out.spec.blocks_x, out.spec.blocks_y, bx, by));
        thetas.push_back(ThetaFunction::coordinate(q++));
      }
  }
  LodConfig lod_config;
  lod_config.n_h = problem.n_h;
  lod_config.n_H = problem.n_H;
  lod_config.ell = problem.ell;
  const auto training = sample_parameters(out.box, 20, problem.seed, 7);
  out.lod = build_lod_system(lod_config, fields, thetas,
                             PiecewiseConstantField::constant(10.0), training);
  const MultiscaleAssembly at_mud = assemble_multiscale_matrix(*out.lod, out.mu_d);
  const Vector u_d = pglod_solve(at_mud.K, out.lod->l_coarse);
  LodObjective objective;
  objective.coarse =
      misfit_objective(out.lod->m_coarse, u_d, problem.sigma_d, sigma_i, out.mu_d);
  out.lod_objective = std::move(objective);
  return out;
}

std::vector<Vector> sample_parameters(const ParameterBox& box, int count, uint64_t seed,
                                      uint64_t tag) {
  CounterRng rng{seed};
  std::vector<Vector> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vector mu(box.dim());
    for (Eigen::Index d = 0; d < box.dim(); ++d)
      mu[d] = rng.uniform(box.lower[d], box.upper[d], tag, static_cast<uint64_t>(i),
                          static_cast<uint64_t>(d));
    out.push_back(std::move(mu));
  }
  return out;
}

RunReport run_method(const ExperimentConfig& config) {
  if (config.threads > 0) {
    Eigen::setNbThreads(config.threads);
#ifdef _OPENMP
    omp_set_num_threads(config.threads);
#endif
  }
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.method = method_name(config.method);

  const bool lod_flavor = config.method == MethodId::PglodBfgs ||
                          config.method == MethodId::TrRblod ||
                          config.method == MethodId::TrTsrblod ||
                          config.method == MethodId::RelaxedTrRblod ||
                          config.method == MethodId::RelaxedTrTsrblod;
  BenchmarkProblem problem = build_problem(config.problem, lod_flavor);

  TrParams params = config.tr;
  TrustRegionState state;
  std::unique_ptr<CertifiedModel> model;
  double value_at_mu_d = 0.0;

  switch (config.method) {
    case MethodId::FemBfgs: {
      model = std::make_unique<ExactFomModel>(*problem.fem);
      state = fom_projected_bfgs(*model, problem.box, params, problem.mu_0);
      value_at_mu_d = problem.fem->solve(problem.mu_d).value;
      break;
    }
    case MethodId::TrRb:
    case MethodId::RelaxedTrRb: {
      params.relaxed = config.method == MethodId::RelaxedTrRb;
      model = std::make_unique<GlobalRbModel>(*problem.fem, RomVariant::Ncd);
      state = run_tr(*model, problem.box, params, problem.mu_0);
      if (params.tau_mu > 0.0 && state.converged) {
        auto estimator = [&](const Vector& mu, const Vector& grad) {
          const ParameterEstimate est = parameter_estimate(*problem.fem, mu, grad);
          return ParameterEstimateResult{est.second_order_verified, est.value};
        };
        state = parameter_control(*model, problem.box, params, state, estimator);
      }
      value_at_mu_d = problem.fem->solve(problem.mu_d).value;
      break;
    }
    case MethodId::PglodBfgs: {
      model = std::make_unique<PglodFomModel>(*problem.lod, *problem.lod_objective);
      state = fom_projected_bfgs(*model, problem.box, params, problem.mu_0);
      value_at_mu_d =
          lod_objective_and_gradient(*problem.lod, *problem.lod_objective, problem.mu_d).value;
      break;
    }
    default: {
      const bool relaxed = config.method == MethodId::RelaxedTrRblod ||
                           config.method == MethodId::RelaxedTrTsrblod;
      const LocalizedVariant variant = (config.method == MethodId::TrRblod ||
                                        config.method == MethodId::RelaxedTrRblod)
                                           ? LocalizedVariant::Rblod
                                           : LocalizedVariant::Tsrblod;
      params.relaxed = relaxed;
      model = std::make_unique<LocalizedLodModel>(*problem.lod, *problem.lod_objective, variant,
                                                  config.tolerances.tau_loc);
      state = run_tr(*model, problem.box, params, problem.mu_0);
      value_at_mu_d =
          lod_objective_and_gradient(*problem.lod, *problem.lod_objective, problem.mu_d).value;
      break;
    }
  }

  report.mu_final = state.mu;
  report.value_final = state.final_value;
  report.g_final = state.final_g_h;
  report.outer_iterations = state.outer_iterations;
  report.converged = state.converged;
  report.termination_reason = state.termination_reason;
  report.basis_summary = model->basis_summary();
  report.counters = state.counters;
  report.history = state.history;
  report.value_at_mu_d = value_at_mu_d;
  report.e_j_rel = std::abs(value_at_mu_d - report.value_final) / std::abs(value_at_mu_d);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {
std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

std::string decision_name(IterationDecision d) {
  switch (d) {
    case IterationDecision::Accepted: return "accepted";
    case IterationDecision::AcceptedSkippedEnrichment: return "accepted-skip";
    default: return "rejected";
  }
}
}  // namespace

std::string iteration_csv(const RunReport& report) {
  std::string out = "k";
  const Eigen::Index P = report.mu_final.size();
  for (Eigen::Index i = 0; i < P; ++i) out += ",mu_" + std::to_string(i);
  out += ",delta,J_r,J_h,g_h,q,inner_iterations,decision,enriched,fom_purpose,basis,fem_evals\n";
  for (const auto& rec : report.history) {
    out += std::to_string(rec.k);
    for (Eigen::Index i = 0; i < P; ++i) out += "," + format_double(rec.mu[i]);
    out += "," + format_double(rec.delta);
    out += "," + format_double(rec.rom_value);
    out += "," + format_double(rec.fom_value);
    out += "," + format_double(rec.g_h);
    out += "," + format_double(rec.q);
    out += "," + std::to_string(rec.inner_iterations);
    out += "," + decision_name(rec.decision);
    out += "," + std::string(rec.enriched ? "1" : "0");
    out += "," + rec.fom_purpose;
    out += "," + (rec.basis.empty() ? std::string("-") : rec.basis);
    out += "," + std::to_string(rec.fem_evals);
    out += "\n";
  }
  return out;
}

std::string summary_json(const RunReport& report, const ExperimentConfig& config) {
  nlohmann::json j;
  j["method"] = report.method;
  j["benchmark"] = config.problem.benchmark;
  j["mu_final"] = std::vector<double>(report.mu_final.data(),
                                      report.mu_final.data() + report.mu_final.size());
  j["value_final"] = report.value_final;
  j["g_final"] = report.g_final;
  j["value_at_mu_d"] = report.value_at_mu_d;
  j["e_j_rel"] = report.e_j_rel;
  j["outer_iterations"] = report.outer_iterations;
  j["converged"] = report.converged;
  j["termination_reason"] = report.termination_reason;
  j["basis"] = report.basis_summary;
  nlohmann::json counters;
  counters["fem"] = report.counters.fem;
  counters["rb"] = report.counters.rb;
  counters["lod_coarse"] = report.counters.lod_coarse;
  counters["lod_local"] = report.counters.lod_local;
  counters["rblod_coarse"] = report.counters.rblod_coarse;
  counters["rblod_local"] = report.counters.rblod_local;
  counters["tsrblod"] = report.counters.tsrblod;
  counters["estimator_assemblies"] = report.counters.estimator_assemblies;
  j["counters"] = counters;
  j["wall_time_seconds"] = report.wall_time_seconds;
  return j.dump(2);
}

void write_outputs(const RunReport& report, const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.output_dir);
  const std::string base = config.output_dir + "/" + report.method;
  {
    std::ofstream csv(base + "_iterations.csv", std::ios::binary);
    require(csv.good(), "write_outputs: cannot open iteration CSV");
    csv << iteration_csv(report);
  }
  {
    std::ofstream json_out(base + "_summary.json");
    require(json_out.good(), "write_outputs: cannot open summary JSON");
    json_out << summary_json(report, config);
  }
}

}  // namespace rbopt
