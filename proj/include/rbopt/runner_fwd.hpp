#pragma once

#include <string>
#include <vector>

#include "rbopt/trust_region.hpp"

namespace rbopt {

struct RunReport {
  std::string method;
  Vector mu_final;
  double value_final = 0.0;
  double g_final = 0.0;
  double e_j_rel = 0.0;  // |J(mu_d) - J(mu_final)| / J(mu_d)
  double value_at_mu_d = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  std::string termination_reason;
  std::string basis_summary;
  EvalCounters counters;
  double wall_time_seconds = 0.0;
  std::vector<TrIterationRecord> history;
};

}  // namespace rbopt
