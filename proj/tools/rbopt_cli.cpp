// Command-line driver: benchmark definitions, method runs and offline
// builds, with CSV/JSON outputs.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rbopt/global_rom.hpp"
#include "rbopt/runner.hpp"
#include "rbopt/stage2.hpp"
#include "rbopt/two_scale.hpp"

using namespace rbopt;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;
  std::string method;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment configuration");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the problem seed");
  cmd->add_option("--method", args.method, "override the method name");
  cmd->add_option("--threads", args.threads, "worker threads (0 = library default)");
}

ExperimentConfig load_config(const CommonArgs& args, const std::string& default_method) {
  ExperimentConfig config;
  if (!args.config_path.empty()) config = parse_config(args.config_path);
  if (!args.method.empty())
    config.method = method_from_name(args.method);
  else if (args.config_path.empty())
    config.method = method_from_name(default_method);
  if (args.seed >= 0) config.problem.seed = static_cast<uint64_t>(args.seed);
  if (!args.out_dir.empty()) config.output_dir = args.out_dir;
  if (args.threads > 0) config.threads = args.threads;
  return config;
}

int run_single(const ExperimentConfig& config) {
  const RunReport report = run_method(config);
  write_outputs(report, config);
  std::cout << report.method << ": J = " << report.value_final << ", g = " << report.g_final
            << ", outer iterations = " << report.outer_iterations
            << ", e_J_rel = " << report.e_j_rel << "\n"
            << "  " << report.termination_reason << "\n"
            << "  outputs in " << config.output_dir << "\n";
  return report.converged || report.termination_reason == "surrogate accuracy floor reached"
             ? 0
             : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trust-region reduced-basis / localized multiscale optimization toolkit"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* fom_solve = app.add_subcommand("fom-solve", "solve the full-order model once");
  add_common(fom_solve, args);
  auto* rb_greedy = app.add_subcommand("rb-greedy", "goal-oriented greedy RB construction");
  add_common(rb_greedy, args);
  int greedy_steps = 8;
  double greedy_tol = 1e-10;
  int training_size = 20;
  rb_greedy->add_option("--steps", greedy_steps, "maximum greedy extensions");
  rb_greedy->add_option("--tol", greedy_tol, "greedy target tolerance");
  rb_greedy->add_option("--training", training_size, "training set size");
  auto* tr_rb = app.add_subcommand("tr-rb", "trust-region reduced-basis optimization");
  add_common(tr_rb, args);
  auto* lod_solve = app.add_subcommand("lod-solve", "solve the PG-LOD once");
  add_common(lod_solve, args);
  auto* stage1_build = app.add_subcommand("stage1-build", "Stage-1 greedy for all elements");
  add_common(stage1_build, args);
  stage1_build->add_option("--training", training_size, "training set size");
  auto* tsrblod_offline =
      app.add_subcommand("tsrblod-offline", "Stage-1 plus Stage-2 greedy construction");
  add_common(tsrblod_offline, args);
  tsrblod_offline->add_option("--training", training_size, "training set size");
  auto* tr_lrb = app.add_subcommand("tr-lrb", "trust-region localized RB optimization");
  add_common(tr_lrb, args);
  auto* compare = app.add_subcommand("compare", "run several methods and tabulate");
  add_common(compare, args);
  std::vector<std::string> method_list;
  compare->add_option("--methods", method_list, "method names to compare")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (fom_solve->parsed()) {
      ExperimentConfig config = load_config(args, "fem_bfgs");
      const BenchmarkProblem problem = build_problem(config.problem, false);
      const FomSolution sol = problem.fem->solve(problem.mu_0);
      std::cout << "J(mu_0) = " << sol.value << ", |grad| = " << sol.gradient.norm()
                << ", dofs = " << problem.fem->n_dofs() << "\n";
      std::filesystem::create_directories(config.output_dir);
      {
        std::ofstream out(config.output_dir + "/fom_solution.json");
        out << "{\n  \"value\": " << sol.value << ",\n  \"gradient_norm\": "
            << sol.gradient.norm() << ",\n  \"foc\": "
            << foc_measure(sol.mu, sol.gradient, problem.box) << ",\n  \"dofs\": "
            << problem.fem->n_dofs() << "\n}\n";
      }
      if (config.export_matrices) {
        std::filesystem::create_directories(config.output_dir);
        write_matrix_market(problem.fem->a.evaluate(problem.mu_0),
                            config.output_dir + "/operator_mu0.mtx");
        std::cout << "operator written to " << config.output_dir << "/operator_mu0.mtx\n";
      }
      return 0;
    }
    if (rb_greedy->parsed()) {
      ExperimentConfig config = load_config(args, "tr_rb");
      const BenchmarkProblem problem = build_problem(config.problem, false);
      const auto training =
          sample_parameters(problem.box, training_size, config.problem.seed, 5);
      RbSpace v_pr, v_du;
      const GreedyResult result = goal_oriented_greedy(*problem.fem, v_pr, v_du, training,
                                                       greedy_steps, greedy_tol);
      std::cout << "greedy: " << result.steps.size() << " extensions, basis " << v_pr.dim()
                << "/" << v_du.dim() << (result.converged ? ", converged" : "") << "\n";
      std::filesystem::create_directories(config.output_dir);
      const GlobalRom rom = build_rom(*problem.fem, v_pr, v_du, RomVariant::Ncd);
      save_rom(rom, config.output_dir + "/global_rom.json");
      std::cout << "rom blob written to " << config.output_dir << "/global_rom.json\n";
      return 0;
    }
    if (tr_rb->parsed()) return run_single(load_config(args, "tr_rb"));
    if (tr_lrb->parsed()) return run_single(load_config(args, "tr_tsrblod"));
    if (lod_solve->parsed()) {
      ExperimentConfig config = load_config(args, "pglod_bfgs");
      const BenchmarkProblem problem = build_problem(config.problem, true);
      const MultiscaleAssembly assembly = assemble_multiscale_matrix(*problem.lod, problem.mu_0);
      const Vector u = pglod_solve(assembly.K, problem.lod->l_coarse);
      const LodSolution sol =
          lod_objective_and_gradient(*problem.lod, *problem.lod_objective, problem.mu_0,
                                     &assembly);
      std::cout << "J_loc(mu_0) = " << sol.value << ", |u_H| = " << u.norm()
                << ", coarse dofs = " << problem.lod->n_coarse_dofs()
                << ", ell = " << problem.lod->ell << "\n";
      if (config.export_matrices) {
        std::filesystem::create_directories(config.output_dir);
        write_matrix_market(assembly.K, config.output_dir + "/multiscale_mu0.mtx");
        // Corrector energy norms per element and shape function.
        const MultiscaleAssembly full = assemble_multiscale_matrix(*problem.lod, problem.mu_0, true);
        const SparseMatrix A_mu = problem.lod->fine_operator(problem.mu_0);
        std::ofstream norms(config.output_dir + "/corrector_norms.csv");
        norms << "element,shape,a_norm\n";
        for (size_t t = 0; t < problem.lod->patches.size(); ++t) {
          const SparseMatrix A_patch =
              problem.lod->patch_submatrix(problem.lod->patches[t], A_mu);
          for (int j = 0; j < problem.lod->patches[t].n_shape(); ++j) {
            const Vector q = full.shape_correctors[t].col(j);
            norms << t << "," << j << "," << std::sqrt(std::max(0.0, q.dot(A_patch * q)))
                  << "\n";
          }
        }
        std::cout << "multiscale matrix and corrector norms written to " << config.output_dir
                  << "\n";
      }
      return 0;
    }
    if (stage1_build->parsed()) {
      ExperimentConfig config = load_config(args, "tr_tsrblod");
      const BenchmarkProblem problem = build_problem(config.problem, true);
      const auto training =
          sample_parameters(problem.box, training_size, config.problem.seed, 5);
      std::filesystem::create_directories(config.output_dir);
      std::ofstream trace(config.output_dir + "/stage1_trace.csv");
      trace << "element,step,selected_mu,selected_shape,max_estimate\n";
      Eigen::Index total = 0;
      for (int t = 0; t < problem.lod->n_elements(); ++t) {
        const Stage1GreedyResult result =
            stage1_greedy(*problem.lod, t, training, config.tolerances.eps_1);
        total += result.rom.dim();
        for (const auto& row : result.trace) {
          trace << t << "," << row.step << ",";
          for (Eigen::Index i = 0; i < row.selected_mu.size(); ++i)
            trace << (i ? ";" : "") << row.selected_mu[i];
          trace << "," << row.selected_shape << "," << row.max_estimate << "\n";
        }
      }
      std::cout << "stage-1 built for " << problem.lod->n_elements()
                << " elements, cumulative size " << total << "; trace in "
                << config.output_dir << "/stage1_trace.csv\n";
      return 0;
    }
    if (tsrblod_offline->parsed()) {
      ExperimentConfig config = load_config(args, "tr_tsrblod");
      const BenchmarkProblem problem = build_problem(config.problem, true);
      const auto training =
          sample_parameters(problem.box, training_size, config.problem.seed, 5);
      std::vector<Stage1GreedyResult> stage1_results;
      for (int t = 0; t < problem.lod->n_elements(); ++t)
        stage1_results.push_back(
            stage1_greedy(*problem.lod, t, training, config.tolerances.eps_1));
      std::vector<const Stage1Rom*> stage1;
      for (const auto& r : stage1_results) stage1.push_back(&r.rom);
      const Stage2GreedyResult result =
          stage2_greedy(*problem.lod, stage1, training, config.tolerances.eps_2);
      std::cout << "stage-2: N = " << result.rom.dim()
                << (result.converged ? ", converged" : "")
                << (result.duplicate_abort ? ", duplicate-selection abort" : "") << "\n";
      return result.duplicate_abort ? 2 : 0;
    }
    if (compare->parsed()) {
      if (method_list.empty()) method_list = {"fem_bfgs", "tr_rb"};
      ExperimentConfig config = load_config(args, method_list.front());
      std::cout << "method,J,g,outer,e_J_rel,fem,lod_coarse,tsrblod,time_s\n";
      for (const auto& name : method_list) {
        config.method = method_from_name(name);
        const RunReport report = run_method(config);
        write_outputs(report, config);
        std::cout << report.method << "," << report.value_final << "," << report.g_final << ","
                  << report.outer_iterations << "," << report.e_j_rel << ","
                  << report.counters.fem << "," << report.counters.lod_coarse << ","
                  << report.counters.tsrblod << "," << report.wall_time_seconds << "\n";
      }
      return 0;
    }
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
  return 0;
}
