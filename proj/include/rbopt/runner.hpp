#pragma once

#include <optional>

#include "rbopt/config.hpp"
#include "rbopt/localized_model.hpp"
#include "rbopt/rb_model.hpp"
#include "rbopt/runner_fwd.hpp"
#include "rbopt/thermal_block.hpp"

namespace rbopt {

/// Fully assembled benchmark instance: the FEM optimization system and/or
/// the localized LOD pair, depending on the method family.
struct BenchmarkProblem {
  ParameterBox box;
  Vector mu_d;
  Vector mu_0;
  ThermalBlockSpec spec;
  std::optional<FomSystem> fem;
  std::optional<LodSystem> lod;
  std::optional<LodObjective> lod_objective;
};

/// Applies the named benchmark's defaults (B1, B2, B3) onto the config.
ProblemConfig apply_benchmark_defaults(ProblemConfig problem);

BenchmarkProblem build_problem(const ProblemConfig& problem, bool lod_flavor);

RunReport run_method(const ExperimentConfig& config);

/// Per-iteration CSV (byte-stable across identical runs) plus a JSON
/// summary; creates the output directory when missing.
void write_outputs(const RunReport& report, const ExperimentConfig& config);

std::string iteration_csv(const RunReport& report);
std::string summary_json(const RunReport& report, const ExperimentConfig& config);

/// Training/validation parameter draws, deterministic in (seed, tag).
std::vector<Vector> sample_parameters(const ParameterBox& box, int count, uint64_t seed,
                                      uint64_t tag);

}  // namespace rbopt
