#include "rbopt/config.hpp"

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace rbopt {

using nlohmann::json;

std::string method_name(MethodId id) {
  switch (id) {
    case MethodId::FemBfgs: return "fem_bfgs";
    case MethodId::TrRb: return "tr_rb";
    case MethodId::RelaxedTrRb: return "r_tr_rb";
    case MethodId::PglodBfgs: return "pglod_bfgs";
    case MethodId::TrRblod: return "tr_rblod";
    case MethodId::TrTsrblod: return "tr_tsrblod";
    case MethodId::RelaxedTrRblod: return "r_tr_rblod";
    default: return "r_tr_tsrblod";
  }
}

MethodId method_from_name(const std::string& name) {
  static const std::map<std::string, MethodId> table = {
      {"fem_bfgs", MethodId::FemBfgs},
      {"tr_rb", MethodId::TrRb},
      {"r_tr_rb", MethodId::RelaxedTrRb},
      {"pglod_bfgs", MethodId::PglodBfgs},
      {"tr_rblod", MethodId::TrRblod},
      {"tr_tsrblod", MethodId::TrTsrblod},
      {"r_tr_rblod", MethodId::RelaxedTrRblod},
      {"r_tr_tsrblod", MethodId::RelaxedTrTsrblod},
  };
  const auto it = table.find(name);
  require(it != table.end(), "unknown method name: " + name);
  return it->second;
}

namespace {

void check_keys(const json& node, const std::set<std::string>& allowed,
                const std::string& path) {
  for (const auto& [key, value] : node.items()) {
    (void)value;
    require(allowed.count(key) > 0, "config: unknown key '" + path + key + "'");
  }
}

Vector vector_from(const json& node) {
  const auto values = node.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json vector_to(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

void parse_problem(const json& node, ProblemConfig& problem) {
  check_keys(node,
             {"benchmark", "n_h", "n_H", "ell", "blocks", "n_fields", "field_resolution",
              "seed", "mu_lower", "mu_upper", "sigma_d", "sigma_i", "mu_d", "mu_0"},
             "problem.");
  if (node.contains("benchmark")) problem.benchmark = node.at("benchmark").get<std::string>();
  if (node.contains("n_h")) problem.n_h = node.at("n_h").get<int>();
  if (node.contains("n_H")) problem.n_H = node.at("n_H").get<int>();
  if (node.contains("ell")) problem.ell = node.at("ell").get<int>();
  if (node.contains("blocks")) problem.blocks = node.at("blocks").get<int>();
  if (node.contains("n_fields")) problem.n_fields = node.at("n_fields").get<int>();
  if (node.contains("field_resolution"))
    problem.field_resolution = node.at("field_resolution").get<int>();
  if (node.contains("seed")) problem.seed = node.at("seed").get<uint64_t>();
  if (node.contains("mu_lower")) problem.mu_lower = vector_from(node.at("mu_lower"));
  if (node.contains("mu_upper")) problem.mu_upper = vector_from(node.at("mu_upper"));
  if (node.contains("sigma_d")) problem.sigma_d = node.at("sigma_d").get<double>();
  if (node.contains("sigma_i")) problem.sigma_i = node.at("sigma_i").get<double>();
  if (node.contains("mu_d")) problem.mu_d = vector_from(node.at("mu_d"));
  if (node.contains("mu_0")) problem.mu_0 = vector_from(node.at("mu_0"));
}

void parse_tr(const json& node, TrParams& tr) {
  check_keys(node,
             {"delta0", "beta1", "beta2", "beta3", "eta_rho", "kappa", "kappa_arm", "max_outer",
              "max_sub_iterations", "max_armijo", "sub_solver", "optional_enrichment",
              "fom_cost_oriented", "enlarging", "relaxed", "relax_base", "relax_decay",
              "relax_skip_threshold"},
             "tr.");
  if (node.contains("delta0")) tr.delta0 = node.at("delta0").get<double>();
  if (node.contains("beta1")) tr.beta1 = node.at("beta1").get<double>();
  if (node.contains("beta2")) tr.beta2 = node.at("beta2").get<double>();
  if (node.contains("beta3")) tr.beta3 = node.at("beta3").get<double>();
  if (node.contains("eta_rho")) tr.eta_rho = node.at("eta_rho").get<double>();
  if (node.contains("kappa")) tr.kappa = node.at("kappa").get<double>();
  if (node.contains("kappa_arm")) tr.kappa_arm = node.at("kappa_arm").get<double>();
  if (node.contains("max_outer")) tr.max_outer = node.at("max_outer").get<int>();
  if (node.contains("max_sub_iterations"))
    tr.max_sub_iterations = node.at("max_sub_iterations").get<int>();
  if (node.contains("max_armijo")) tr.max_armijo = node.at("max_armijo").get<int>();
  if (node.contains("sub_solver")) {
    const std::string name = node.at("sub_solver").get<std::string>();
    require(name == "bfgs" || name == "newton_cg", "config: unknown sub_solver '" + name + "'");
    tr.sub_solver = name == "bfgs" ? SubSolver::Bfgs : SubSolver::NewtonCg;
  }
  if (node.contains("optional_enrichment"))
    tr.optional_enrichment = node.at("optional_enrichment").get<bool>();
  if (node.contains("fom_cost_oriented"))
    tr.fom_cost_oriented = node.at("fom_cost_oriented").get<bool>();
  if (node.contains("enlarging")) tr.enlarging = node.at("enlarging").get<bool>();
  if (node.contains("relaxed")) tr.relaxed = node.at("relaxed").get<bool>();
  if (node.contains("relax_base")) tr.relax_base = node.at("relax_base").get<double>();
  if (node.contains("relax_decay")) tr.relax_decay = node.at("relax_decay").get<double>();
  if (node.contains("relax_skip_threshold"))
    tr.relax_skip_threshold = node.at("relax_skip_threshold").get<double>();
}

void parse_tolerances(const json& node, ToleranceConfig& tol) {
  check_keys(node, {"eps_1", "eps_2", "tau_loc", "tau_foc", "tau_sub", "tau_mu"},
             "tolerances.");
  if (node.contains("eps_1")) tol.eps_1 = node.at("eps_1").get<double>();
  if (node.contains("eps_2")) tol.eps_2 = node.at("eps_2").get<double>();
  if (node.contains("tau_loc")) tol.tau_loc = node.at("tau_loc").get<double>();
  if (node.contains("tau_foc")) tol.tau_foc = node.at("tau_foc").get<double>();
  if (node.contains("tau_sub")) tol.tau_sub = node.at("tau_sub").get<double>();
  if (node.contains("tau_mu")) tol.tau_mu = node.at("tau_mu").get<double>();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& error) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + error.what());
  }
  check_keys(root,
             {"schema_version", "problem", "method", "tr", "tolerances", "output_dir",
              "export_matrices", "threads"},
             "");
  ExperimentConfig config;
  if (root.contains("schema_version"))
    config.schema_version = root.at("schema_version").get<int>();
  require(config.schema_version == 1, "config: unsupported schema version");
  if (root.contains("problem")) parse_problem(root.at("problem"), config.problem);
  if (root.contains("method"))
    config.method = method_from_name(root.at("method").get<std::string>());
  if (root.contains("tr")) parse_tr(root.at("tr"), config.tr);
  if (root.contains("tolerances")) parse_tolerances(root.at("tolerances"), config.tolerances);
  if (root.contains("output_dir")) config.output_dir = root.at("output_dir").get<std::string>();
  if (root.contains("export_matrices"))
    config.export_matrices = root.at("export_matrices").get<bool>();
  if (root.contains("threads")) config.threads = root.at("threads").get<int>();

  config.tr.tau_foc = config.tolerances.tau_foc;
  config.tr.tau_sub = config.tolerances.tau_sub;
  config.tr.tau_mu = config.tolerances.tau_mu;
  config.tr.validate();
  return config;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string serialize_config(const ExperimentConfig& config) {
  json root;
  root["schema_version"] = config.schema_version;
  json problem;
  problem["benchmark"] = config.problem.benchmark;
  problem["n_h"] = config.problem.n_h;
  problem["n_H"] = config.problem.n_H;
  problem["ell"] = config.problem.ell;
  problem["blocks"] = config.problem.blocks;
  problem["n_fields"] = config.problem.n_fields;
  problem["field_resolution"] = config.problem.field_resolution;
  problem["seed"] = config.problem.seed;
  problem["sigma_d"] = config.problem.sigma_d;
  problem["sigma_i"] = config.problem.sigma_i;
  if (config.problem.mu_lower.size()) problem["mu_lower"] = vector_to(config.problem.mu_lower);
  if (config.problem.mu_upper.size()) problem["mu_upper"] = vector_to(config.problem.mu_upper);
  if (config.problem.mu_d.size()) problem["mu_d"] = vector_to(config.problem.mu_d);
  if (config.problem.mu_0.size()) problem["mu_0"] = vector_to(config.problem.mu_0);
  root["problem"] = problem;
  root["method"] = method_name(config.method);
  json tr;
  tr["delta0"] = config.tr.delta0;
  tr["beta1"] = config.tr.beta1;
  tr["beta2"] = config.tr.beta2;
  tr["beta3"] = config.tr.beta3;
  tr["eta_rho"] = config.tr.eta_rho;
  tr["kappa"] = config.tr.kappa;
  tr["kappa_arm"] = config.tr.kappa_arm;
  tr["max_outer"] = config.tr.max_outer;
  tr["max_sub_iterations"] = config.tr.max_sub_iterations;
  tr["max_armijo"] = config.tr.max_armijo;
  tr["sub_solver"] = config.tr.sub_solver == SubSolver::Bfgs ? "bfgs" : "newton_cg";
  tr["optional_enrichment"] = config.tr.optional_enrichment;
  tr["fom_cost_oriented"] = config.tr.fom_cost_oriented;
  tr["enlarging"] = config.tr.enlarging;
  tr["relaxed"] = config.tr.relaxed;
  tr["relax_base"] = config.tr.relax_base;
  tr["relax_decay"] = config.tr.relax_decay;
  tr["relax_skip_threshold"] = config.tr.relax_skip_threshold;
  root["tr"] = tr;
  json tol;
  tol["eps_1"] = config.tolerances.eps_1;
  tol["eps_2"] = config.tolerances.eps_2;
  tol["tau_loc"] = config.tolerances.tau_loc;
  tol["tau_foc"] = config.tolerances.tau_foc;
  tol["tau_sub"] = config.tolerances.tau_sub;
  tol["tau_mu"] = config.tolerances.tau_mu;
  root["tolerances"] = tol;
  root["output_dir"] = config.output_dir;
  root["export_matrices"] = config.export_matrices;
  root["threads"] = config.threads;
  return root.dump(2);
}

}  // namespace rbopt
