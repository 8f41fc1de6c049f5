#include <doctest.h>

#include "support_lod.hpp"

using namespace rbopt;
using namespace rbopt::testing;

TEST_CASE("coarse pair and patches") {
  SUBCASE("patch sizes and overlap constant") {
    const LodSystem lod = small_lod(32, 8, 2);
    // Interior element (4,4): full 5x5 ring.
    const Patch& interior = lod.patches[4 * 8 + 4];
    CHECK(interior.coarse_elements.size() == 25);
    // Corner element with ell = 1 clips to 2x2.
    const LodSystem lod1 = small_lod(32, 8, 1);
    CHECK(lod1.patches[0].coarse_elements.size() == 4);
    const LodSystem lod3 = small_lod(32, 8, 3);
    CHECK(lod3.constants.C_ovl == doctest::Approx(49.0));
  }
  SUBCASE("default oversampling exceeds |log H|") {
    auto [fields, thetas] = one_parameter_coefficient(8, 3);
    LodConfig config;
    config.n_h = 32;
    config.n_H = 8;  // |log H| = log 8 = 2.07...
    ParameterBox box{Vector::Constant(1, 0.0), Vector::Constant(1, 5.0)};
    const LodSystem lod = build_lod_system(config, fields, thetas,
                                           PiecewiseConstantField::constant(1.0),
                                           random_mus(box, 3, 2));
    CHECK(lod.ell == 3);
  }
  SUBCASE("divisibility violation rejected") {
    auto [fields, thetas] = one_parameter_coefficient(8, 3);
    LodConfig config;
    config.n_h = 30;
    config.n_H = 8;
    ParameterBox box{Vector::Constant(1, 0.0), Vector::Constant(1, 5.0)};
    CHECK_THROWS(build_lod_system(config, fields, thetas,
                                  PiecewiseConstantField::constant(1.0), random_mus(box, 3, 2)));
  }
  SUBCASE("interpolation is idempotent on coarse functions") {
    const LodSystem lod = small_lod(32, 4, 2);
    CounterRng rng{5};
    Vector v_H(lod.n_coarse_dofs());
    for (Eigen::Index i = 0; i < v_H.size(); ++i) v_H[i] = rng.uniform(-1.0, 1.0, i);
    const Vector back = lod.interpolation * (lod.prolongation * v_H);
    CHECK((back - v_H).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("correctors") {
  const LodSystem lod = small_lod(32, 4, 1);  // ell=1 so patches are proper subsets
  Vector mu = Vector::Constant(1, 2.0);
  const SparseMatrix A_mu = lod.fine_operator(mu);

  SUBCASE("kernel constraint holds and disjoint support gives zero") {
    const Patch& patch = lod.patches[0];  // corner element
    const PatchSolver solver(lod, patch, lod.patch_submatrix(patch, A_mu));
    // Shape function on T.
    Vector e = Vector::Zero(lod.n_coarse_dofs());
    e[patch.coarse_basis[0]] = 1.0;
    const Vector q = solve_corrector(lod, patch, solver, mu, e);
    CHECK(q.norm() > 0.0);
    const Vector interpolated = lod.interpolation * lod.prolong_from_patch(patch, q);
    CHECK(interpolated.cwiseAbs().maxCoeff() < 1e-9);

    // A coarse function vanishing on T has a^T rhs zero.
    const int far_dof = lod.patches[15].coarse_basis.back();
    Vector far = Vector::Zero(lod.n_coarse_dofs());
    far[far_dof] = 1.0;
    const Vector q0 = solve_corrector(lod, patch, solver, mu, far);
    CHECK(q0.norm() < 1e-12);
  }
  SUBCASE("energy decay towards the full-domain corrector") {
    // Full-domain corrector: ell large enough that every patch is Omega.
    const LodSystem full = small_lod(32, 4, 4);
    Vector e = Vector::Zero(full.n_coarse_dofs());
    e[full.patches[5].coarse_basis[0]] = 1.0;
    const Patch& full_patch = full.patches[5];
    const PatchSolver full_solver(full, full_patch, full.patch_submatrix(full_patch, A_mu));
    const Vector q_global =
        full.prolong_from_patch(full_patch, solve_corrector(full, full_patch, full_solver, mu, e));

    double previous = std::numeric_limits<double>::infinity();
    for (int ell = 1; ell <= 3; ++ell) {
      const LodSystem trunc = small_lod(32, 4, ell);
      const Patch& patch = trunc.patches[5];
      const PatchSolver solver(trunc, patch, trunc.patch_submatrix(patch, A_mu));
      const Vector q =
          trunc.prolong_from_patch(patch, solve_corrector(trunc, patch, solver, mu, e));
      const Vector diff = q_global - q;
      const double err = std::sqrt(diff.dot(A_mu * diff));
      CHECK(err <= previous * (1.0 + 1e-12));
      previous = err;
    }
    CHECK(previous < 1e-10);  // ell = 3 already covers the 4x4 coarse grid
  }
}

TEST_CASE("multiscale matrix") {
  SUBCASE("coarse-equal-fine grid degenerates to the coarse FEM stiffness") {
    auto [fields, thetas] = one_parameter_coefficient(8, 3);
    LodConfig config;
    config.n_h = 8;
    config.n_H = 8;
    config.ell = 2;
    ParameterBox box{Vector::Constant(1, 0.0), Vector::Constant(1, 5.0)};
    const LodSystem lod = build_lod_system(config, fields, thetas,
                                           PiecewiseConstantField::constant(1.0),
                                           random_mus(box, 3, 2));
    Vector mu = Vector::Constant(1, 1.5);
    const MultiscaleAssembly assembly = assemble_multiscale_matrix(lod, mu, true);
    for (const auto& q : assembly.shape_correctors) CHECK(q.norm() < 1e-9);
    const Matrix K = Matrix(assembly.K);
    const Matrix A_coarse = Matrix(lod.coarse_operator(mu));
    CHECK((K - A_coarse).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("element blocks only couple the local shape functions") {
    const LodSystem lod = small_lod(32, 8, 2);
    Vector mu = Vector::Constant(1, 1.0);
    const MultiscaleAssembly assembly = assemble_multiscale_matrix(lod, mu);
    for (size_t t = 0; t < lod.patches.size(); ++t) {
      CHECK(assembly.element_blocks[t].cols() == lod.patches[t].n_shape());
      CHECK(assembly.element_blocks[t].cols() <= 4);
    }
  }
  SUBCASE("assembly is additive and order-independent") {
    const LodSystem lod = small_lod(16, 4, 1);
    Vector mu = Vector::Constant(1, 2.5);
    const MultiscaleAssembly a1 = assemble_multiscale_matrix(lod, mu);
    const MultiscaleAssembly a2 = assemble_multiscale_matrix(lod, mu);
    CHECK((Matrix(a1.K) - Matrix(a2.K)).cwiseAbs().maxCoeff() == 0.0);
    Matrix sum = Matrix::Zero(lod.n_coarse_dofs(), lod.n_coarse_dofs());
    for (size_t t = 0; t < lod.patches.size(); ++t) {
      const Patch& patch = lod.patches[t];
      for (int j = 0; j < patch.n_shape(); ++j)
        for (size_t r = 0; r < patch.coarse_rows.size(); ++r)
          sum(patch.coarse_rows[r], patch.coarse_basis[j]) +=
              a1.element_blocks[t](static_cast<Eigen::Index>(r), j);
    }
    CHECK((Matrix(a1.K) - sum).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("pglod solve") {
  const LodSystem lod = small_lod(32, 4, 2);
  Vector mu = Vector::Constant(1, 1.2);
  const MultiscaleAssembly assembly = assemble_multiscale_matrix(lod, mu);

  SUBCASE("zero load gives zero") {
    CHECK(pglod_solve(assembly.K, Vector::Zero(lod.n_coarse_dofs())).norm() == 0.0);
  }
  SUBCASE("L2 error against fine FEM decreases with the coarse resolution") {
    auto [fields, thetas] = one_parameter_coefficient(16, 11);
    ParameterBox box{Vector::Constant(1, 0.0), Vector::Constant(1, 5.0)};
    const auto train = random_mus(box, 3, 2);
    Vector mu_fix = Vector::Constant(1, 3.0);

    // Fine FEM oracle on the 64^2 grid.
    const StructuredGrid fine = build_grid(64);
    AffineOperator a;
    for (const auto& f : fields)
      a.components.push_back(assemble_matrix(fine, f, ComponentKind::Diffusion));
    a.thetas = thetas;
    const Vector rhs = assemble_rhs(fine, PiecewiseConstantField::constant(1.0));
    Eigen::SimplicialLDLT<SparseMatrix> solver(a.evaluate(mu_fix));
    const Vector u_fem = solver.solve(rhs);
    const SparseMatrix mass =
        assemble_matrix(fine, PiecewiseConstantField::constant(1.0), ComponentKind::L2);
    const double norm_fem = std::sqrt(u_fem.dot(mass * u_fem));

    double previous = std::numeric_limits<double>::infinity();
    for (int n_H : {4, 8, 16}) {
      LodConfig config;
      config.n_h = 64;
      config.n_H = n_H;
      const LodSystem sys = build_lod_system(config, fields, thetas,
                                             PiecewiseConstantField::constant(1.0), train);
      const MultiscaleAssembly asm_h = assemble_multiscale_matrix(sys, mu_fix);
      const Vector u_H = pglod_solve(asm_h.K, sys.l_coarse);
      const Vector diff = u_fem - sys.prolongation * u_H;
      const double err = std::sqrt(diff.dot(mass * diff)) / norm_fem;
      CHECK(err < previous);
      previous = err;
    }
  }
}

TEST_CASE("lod objective and gradient") {
  const LodSystem lod = small_lod(32, 4, 2);
  ParameterBox box{Vector::Constant(1, 0.5), Vector::Constant(1, 4.0)};
  Vector mu_d = Vector::Constant(1, 2.0);
  const MultiscaleAssembly at_mud_asm = assemble_multiscale_matrix(lod, mu_d);
  const Vector u_d = pglod_solve(at_mud_asm.K, lod.l_coarse);
  const LodObjective objective =
      lod_misfit_objective(lod, u_d, 100.0, Vector::Constant(1, 1e-3), mu_d);

  SUBCASE("stationary at the desired parameter") {
    const LodSolution sol = lod_objective_and_gradient(lod, objective, mu_d, &at_mud_asm);
    CHECK(sol.value == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(sol.gradient.norm() < 1e-9);
  }
  SUBCASE("finite-difference check of the exact adjoint gradient") {
    Vector mu = Vector::Constant(1, 1.3);
    const LodSolution sol = lod_objective_and_gradient(lod, objective, mu, nullptr, true);
    auto J = [&](const Vector& m) { return lod_objective_and_gradient(lod, objective, m).value; };
    const Vector fd = fd_gradient(J, mu);
    CHECK((sol.gradient - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
  }
  SUBCASE("coarse-representative gradient is a controlled approximation") {
    Vector mu = Vector::Constant(1, 1.3);
    const LodSolution approx = lod_objective_and_gradient(lod, objective, mu);
    const LodSolution exact = lod_objective_and_gradient(lod, objective, mu, nullptr, true);
    // Same stationary structure (both vanish at mu_d), moderate deviation
    // away from it: the formula drops the corrector sensitivities.
    CHECK((approx.gradient - exact.gradient).norm() <
          0.2 * std::max(1.0, exact.gradient.norm()));
    const LodSolution at_mud = lod_objective_and_gradient(lod, objective, mu_d, &at_mud_asm);
    CHECK(at_mud.gradient.norm() < 1e-9);
  }
  SUBCASE("coarse-equal-fine grid matches the plain FEM optimization model") {
    auto [fields, thetas] = one_parameter_coefficient(8, 3);
    LodConfig config;
    config.n_h = 8;
    config.n_H = 8;
    config.ell = 2;
    const auto train = random_mus(box, 3, 2);
    const LodSystem degenerate = build_lod_system(config, fields, thetas,
                                                  PiecewiseConstantField::constant(1.0), train);
    const MultiscaleAssembly asm_d = assemble_multiscale_matrix(degenerate, mu_d);
    const Vector u_d2 = pglod_solve(asm_d.K, degenerate.l_coarse);
    const LodObjective obj2 =
        lod_misfit_objective(degenerate, u_d2, 100.0, Vector::Constant(1, 1e-3), mu_d);
    Vector mu = Vector::Constant(1, 1.7);
    const LodSolution lod_sol = lod_objective_and_gradient(degenerate, obj2, mu);

    FomSystem fem;
    fem.grid = build_grid(8);
    for (const auto& f : fields)
      fem.a.components.push_back(assemble_matrix(fem.grid, f, ComponentKind::Diffusion));
    fem.a.thetas = thetas;
    fem.a.psd_components = true;
    fem.l.components.push_back(assemble_rhs(fem.grid, PiecewiseConstantField::constant(1.0)));
    fem.l.thetas.push_back(ThetaFunction::constant(1.0));
    fem.box = box;
    fem.mu_bar = box.midpoint();
    fem.finalize();
    fem.objective = misfit_objective(fem.l2_mass, u_d2, 100.0, Vector::Constant(1, 1e-3), mu_d);
    const FomSolution fem_sol = fem.solve(mu);
    CHECK(lod_sol.value == doctest::Approx(fem_sol.value).epsilon(1e-9));
    CHECK((lod_sol.gradient - fem_sol.gradient).norm() <
          1e-8 * std::max(1.0, fem_sol.gradient.norm()));
  }
}

TEST_CASE("two-scale formulation") {
  const LodSystem lod = small_lod(32, 4, 2);
  const TwoScaleWorkspace workspace(lod);
  Vector mu = Vector::Constant(1, 2.2);

  SUBCASE("the PG-LOD tuple solves the two-scale equation") {
    const TwoScaleVector u = two_scale_solution(lod, mu);
    for (int t = 0; t < 20; ++t) {
      const TwoScaleVector v = random_two_scale(lod, workspace, 100 + t);
      const double lhs = two_scale_apply(lod, mu, u, v);
      const double rhs = two_scale_rhs(lod, v);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
  }
  SUBCASE("block-system oracle returns the same tuple") {
    const TwoScaleVector u = two_scale_solution(lod, mu);
    const TwoScaleVector oracle = two_scale_block_oracle(lod, mu);
    CHECK((u.coarse - oracle.coarse).norm() < 1e-9 * oracle.coarse.norm());
    for (size_t t = 0; t < u.fine.size(); ++t)
      CHECK((u.fine[t] - oracle.fine[t]).norm() < 1e-9 * std::max(1.0, oracle.fine[t].norm()));
  }
  SUBCASE("any other tuple leaves a positive residual") {
    const TwoScaleVector u = random_two_scale(lod, workspace, 7);
    const TwoScaleEstimate est = two_scale_estimators(lod, workspace, mu, u);
    CHECK(est.residual_dual_norm > 1e-3);
  }
  SUBCASE("continuity bound") {
    const double bound = std::sqrt(lod.constants.beta);
    for (int t = 0; t < 5; ++t) {
      const TwoScaleVector u = random_two_scale(lod, workspace, 200 + t);
      const TwoScaleVector v = random_two_scale(lod, workspace, 300 + t);
      const double b = std::abs(two_scale_apply(lod, mu, u, v));
      const double norm_u = two_scale_norms(lod, mu, u).a_norm;
      const double norm_v = two_scale_h1_norm(lod, v);
      CHECK(b <= bound * norm_u * norm_v * (1.0 + 1e-9));
    }
  }
  SUBCASE("norm equivalence sandwich") {
    const double lower = std::sqrt(lod.constants.alpha) / lod.constants.C_IH;
    const double upper =
        std::sqrt(3.0 * (1.0 + lod.constants.C_ovl) * lod.constants.beta);
    for (int t = 0; t < 5; ++t) {
      const TwoScaleVector u = random_two_scale(lod, workspace, 400 + t);
      const TwoScaleNorms norms = two_scale_norms(lod, mu, u);
      CHECK(norms.a_norm >= lower * norms.s_norm * (1.0 - 1e-9));
      CHECK(norms.a_norm <= upper * norms.s_norm * (1.0 + 1e-9));
    }
  }
  SUBCASE("estimator vanishes at the solution and is reliable and efficient") {
    const TwoScaleVector solution = two_scale_solution(lod, mu);
    const TwoScaleEstimate at_solution = two_scale_estimators(lod, workspace, mu, solution);
    CHECK(at_solution.eta_a < 1e-9);

    for (int t = 0; t < 5; ++t) {
      TwoScaleVector perturbed = solution;
      const TwoScaleVector noise = random_two_scale(lod, workspace, 500 + t, 0.05);
      perturbed.coarse += noise.coarse;
      for (size_t k = 0; k < perturbed.fine.size(); ++k) perturbed.fine[k] += noise.fine[k];
      const TwoScaleEstimate est = two_scale_estimators(lod, workspace, mu, perturbed);

      TwoScaleVector error = solution;
      error.coarse -= perturbed.coarse;
      for (size_t k = 0; k < error.fine.size(); ++k) error.fine[k] -= perturbed.fine[k];
      const double err_a = two_scale_norms(lod, mu, error).a_norm;
      CHECK(err_a <= est.eta_a * (1.0 + 1e-9));
      const double efficiency = std::sqrt(5.0) / lod.constants.gamma_kl *
                                std::sqrt(lod.constants.beta) * err_a;
      CHECK(est.eta_a <= efficiency * (1.0 + 1e-9));
    }
  }
  SUBCASE("eta_1 follows from eta_a by the stated constant") {
    const TwoScaleVector u = random_two_scale(lod, workspace, 9);
    const TwoScaleEstimate est = two_scale_estimators(lod, workspace, mu, u);
    CHECK(est.eta_1 == doctest::Approx(est.eta_a * lod.constants.C_IH /
                                       std::sqrt(lod.constants.alpha)));
  }
}
