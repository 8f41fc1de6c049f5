#pragma once

#include <optional>
#include <string>

#include "rbopt/params.hpp"
#include "rbopt/trust_region.hpp"

namespace rbopt {

enum class MethodId {
  FemBfgs,
  TrRb,
  RelaxedTrRb,
  PglodBfgs,
  TrRblod,
  TrTsrblod,
  RelaxedTrRblod,
  RelaxedTrTsrblod,
};

std::string method_name(MethodId id);
MethodId method_from_name(const std::string& name);

struct ProblemConfig {
  std::string benchmark;  // "B1", "B2", "B3" or "custom"
  int n_h = 64;
  int n_H = 8;
  int ell = -1;           // < 0: default rule
  int blocks = 2;         // blocks per axis
  int n_fields = 1;
  int field_resolution = 32;
  uint64_t seed = 42;
  Vector mu_lower, mu_upper;
  double sigma_d = 100.0;
  double sigma_i = 1e-3;
  Vector mu_d;            // empty: deterministic draw from the seed
  Vector mu_0;            // empty: deterministic draw from the seed
};

struct ToleranceConfig {
  double eps_1 = 1e-3;   // Stage-1 greedy
  double eps_2 = 1e-2;   // Stage-2 greedy
  double tau_loc = 1e-3;
  double tau_foc = 1e-6;
  double tau_sub = 1e-8;
  double tau_mu = -1.0;
};

struct ExperimentConfig {
  int schema_version = 1;
  ProblemConfig problem;
  MethodId method = MethodId::TrRb;
  TrParams tr;
  ToleranceConfig tolerances;
  std::string output_dir = "out";
  bool export_matrices = false;
  int threads = 0;  // 0: library default
};

/// Parses and validates the JSON config; unknown keys are rejected with
/// their field path.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

/// Normalized serialization (defaults applied, fixed key order).
std::string serialize_config(const ExperimentConfig& config);

}  // namespace rbopt
