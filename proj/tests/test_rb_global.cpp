#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>

#include "rbopt/global_rom.hpp"
#include "support.hpp"

using namespace rbopt;
using namespace rbopt::testing;

namespace {

BenchmarkSystem bench4() {
  ParameterBox box{Vector::Constant(4, 0.5), Vector::Constant(4, 4.0)};
  Vector mu_d(4);
  mu_d << 1.5, 2.0, 1.0, 2.5;
  return make_benchmark(16, 2, 1, box, mu_d, 100.0, 1e-2, 5, 8);
}

FomSolution enrich_lagrange(const FomSystem& fom, RbSpace& v_pr, RbSpace& v_du,
                            const Vector& mu) {
  const FomSolution snap = fom.solve(mu);
  extend_basis(v_pr, snap.u, fom.product);
  extend_basis(v_du, snap.p, fom.product);
  return snap;
}

}  // namespace

TEST_CASE("basis enrichment strategies") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.0, 1.0, 0.8, 2.8;

  SUBCASE("lagrange enrichment adds one vector per space") {
    enrich_lagrange(fom, v_pr, v_du, mu1);
    CHECK(v_pr.dim() == 1);
    CHECK(v_du.dim() == 1);
    enrich_lagrange(fom, v_pr, v_du, mu2);
    CHECK(v_pr.dim() == 2);
    CHECK(v_du.dim() == 2);
  }
  SUBCASE("re-enriching the same parameter discards both snapshots") {
    enrich_lagrange(fom, v_pr, v_du, mu1);
    enrich_lagrange(fom, v_pr, v_du, mu1);
    CHECK(v_pr.dim() == 1);
    CHECK(v_du.dim() == 1);
  }
  SUBCASE("directional taylor enrichment adds two vectors per space") {
    const FomSolution snap = fom.solve(mu1);
    Vector eta = snap.gradient;
    const Vector du = fom.solve_sensitivity(mu1, eta, SensitivityKind::Primal, snap.u);
    const Vector dp = fom.solve_sensitivity(mu1, eta, SensitivityKind::Dual, snap.u, snap.p, du);
    Matrix pr(fom.n_dofs(), 2), du_mat(fom.n_dofs(), 2);
    pr.col(0) = snap.u;
    pr.col(1) = du;
    du_mat.col(0) = snap.p;
    du_mat.col(1) = dp;
    extend_basis(v_pr, pr, fom.product);
    extend_basis(v_du, du_mat, fom.product);
    CHECK(v_pr.dim() == 2);
    CHECK(v_du.dim() == 2);
  }
  SUBCASE("basis stays orthonormal in the energy product") {
    enrich_lagrange(fom, v_pr, v_du, mu1);
    enrich_lagrange(fom, v_pr, v_du, mu2);
    const Matrix gram = v_pr.basis.transpose() * (fom.product * v_pr.basis);
    CHECK((gram - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("rom solve reproduces snapshots and satisfies reduced equations") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.2, 0.9, 1.1, 3.0;
  const FomSolution snap1 = enrich_lagrange(fom, v_pr, v_du, mu1);
  enrich_lagrange(fom, v_pr, v_du, mu2);

  CHECK_THROWS(build_rom(fom, RbSpace{}, v_du, RomVariant::Ncd));
  const GlobalRom rom = build_rom(fom, v_pr, v_du, RomVariant::Ncd);

  SUBCASE("Galerkin exactness at the snapshot") {
    const RomSolution sol = rom_solve(rom, mu1);
    CHECK((v_pr.reconstruct(sol.u) - snap1.u).norm() < 1e-10 * snap1.u.norm());
  }
  SUBCASE("reduced residual orthogonal to the test space") {
    Vector mu(4);
    mu << 1.7, 2.3, 0.9, 1.2;
    const RomSolution sol = rom_solve(rom, mu);
    const Vector res = rom.reduced_lpr(mu) - rom.reduced_App(mu) * sol.u;
    CHECK(res.norm() < 1e-12 * rom.reduced_lpr(mu).norm());
  }
  SUBCASE("conforming spaces give vanishing auxiliaries") {
    RbSpace both;
    extend_basis(both, v_pr.basis, fom.product);
    extend_basis(both, v_du.basis, fom.product);
    const GlobalRom conforming = build_rom(fom, both, both, RomVariant::Ncd);
    Vector mu(4);
    mu << 1.5, 1.5, 1.5, 1.5;
    const RomSolution sol = rom_solve(conforming, mu);
    CHECK(sol.z.norm() < 1e-10);
    CHECK(sol.w.norm() < 1e-10);
  }
}

TEST_CASE("rom functional") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.2, 0.9, 1.1, 3.0;
  const FomSolution snap1 = enrich_lagrange(fom, v_pr, v_du, mu1);
  enrich_lagrange(fom, v_pr, v_du, mu2);
  const GlobalRom ncd = build_rom(fom, v_pr, v_du, RomVariant::Ncd);
  const GlobalRom std_rom = build_rom(fom, v_pr, v_du, RomVariant::Standard);

  SUBCASE("snapshot value equals the FOM objective") {
    const RomSolution sol = rom_solve(ncd, mu1);
    CHECK(sol.value == doctest::Approx(snap1.value).epsilon(1e-10));
  }
  SUBCASE("NCD identity: corrected minus standard equals the residual term") {
    Vector mu(4);
    mu << 1.9, 1.2, 2.6, 0.8;
    const RomSolution sol_ncd = rom_solve(ncd, mu);
    const RomSolution sol_std = rom_solve(std_rom, mu);
    const double corr = ncd.correction_term(mu, sol_ncd.u, sol_ncd.p);
    CHECK(sol_ncd.value - sol_std.value == doctest::Approx(corr).epsilon(1e-12));

    // Cross-check the correction term against the assembled fine residual.
    const Vector u_fine = v_pr.reconstruct(sol_ncd.u);
    const Vector p_fine = v_du.reconstruct(sol_ncd.p);
    const double direct = fom.primal_residual(mu, u_fine).dot(p_fine);
    CHECK(corr == doctest::Approx(direct).epsilon(1e-10));
  }
  SUBCASE("conforming spaces make NCD coincide with the standard value") {
    RbSpace both;
    extend_basis(both, v_pr.basis, fom.product);
    extend_basis(both, v_du.basis, fom.product);
    const GlobalRom conf_ncd = build_rom(fom, both, both, RomVariant::Ncd);
    const GlobalRom conf_std = build_rom(fom, both, both, RomVariant::Standard);
    Vector mu(4);
    mu << 2.0, 2.5, 0.7, 1.1;
    CHECK(rom_solve(conf_ncd, mu).value ==
          doctest::Approx(rom_solve(conf_std, mu).value).epsilon(1e-12));
  }
}

TEST_CASE("rom gradients") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4), mu3(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.2, 0.9, 1.1, 3.0;
  mu3 << 3.0, 3.2, 2.2, 0.9;
  enrich_lagrange(fom, v_pr, v_du, mu1);
  enrich_lagrange(fom, v_pr, v_du, mu2);
  enrich_lagrange(fom, v_pr, v_du, mu3);
  const GlobalRom rom = build_rom(fom, v_pr, v_du, RomVariant::Ncd);

  Vector mu(4);
  mu << 1.8, 1.1, 2.4, 2.0;

  SUBCASE("adjoint NCD gradient matches finite differences of the NCD value") {
    const RomSolution sol = rom_solve(rom, mu);
    const Vector grad = rom_gradient(rom, sol, GradientMode::NcdAdjoint);
    auto value = [&](const Vector& m) { return rom_solve(rom, m).value; };
    const Vector fd = fd_gradient(value, mu);
    CHECK((grad - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
  }
  SUBCASE("adjoint and sensitivity modes agree") {
    const RomSolution sol = rom_solve(rom, mu);
    const Vector adj = rom_gradient(rom, sol, GradientMode::NcdAdjoint);
    const Vector sens = rom_gradient(rom, sol, GradientMode::NcdSensitivity);
    CHECK((adj - sens).norm() <= 1e-9 * std::max(1.0, adj.norm()));
  }
  SUBCASE("conforming spaces: inexact equals adjoint NCD") {
    RbSpace both;
    extend_basis(both, v_pr.basis, fom.product);
    extend_basis(both, v_du.basis, fom.product);
    const GlobalRom conforming = build_rom(fom, both, both, RomVariant::Ncd);
    const RomSolution sol = rom_solve(conforming, mu);
    const Vector inexact = rom_gradient(conforming, sol, GradientMode::Inexact);
    const Vector adj = rom_gradient(conforming, sol, GradientMode::NcdAdjoint);
    CHECK((inexact - adj).norm() < 1e-9 * std::max(1.0, adj.norm()));
  }
  SUBCASE("snapshot parameter reproduces the FOM gradient") {
    const FomSolution snap = fom.solve(mu1);
    const RomSolution sol = rom_solve(rom, mu1);
    const Vector grad = rom_gradient(rom, sol, GradientMode::NcdAdjoint);
    CHECK((grad - snap.gradient).norm() <= 1e-8 * std::max(1.0, snap.gradient.norm()));
  }
}

TEST_CASE("rom hessian action") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.2, 0.9, 1.1, 3.0;
  enrich_lagrange(fom, v_pr, v_du, mu1);
  enrich_lagrange(fom, v_pr, v_du, mu2);
  const GlobalRom rom = build_rom(fom, v_pr, v_du, RomVariant::Ncd);
  Vector mu(4);
  mu << 1.4, 2.1, 1.9, 1.0;
  Vector eta(4);
  eta << 0.5, -1.0, 0.8, 0.2;

  SUBCASE("finite differences of the adjoint gradient") {
    const RomSolution sol = rom_solve(rom, mu);
    const Vector heta = rom_hessian_vec(rom, sol, eta);
    auto grad = [&](const Vector& m) {
      const RomSolution s = rom_solve(rom, m);
      return rom_gradient(rom, s, GradientMode::NcdAdjoint);
    };
    const double h = 1e-5;
    const Vector fd = (grad(mu + h * eta) - grad(mu - h * eta)) / (2.0 * h);
    CHECK((heta - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
  }
  SUBCASE("symmetry") {
    const RomSolution sol = rom_solve(rom, mu);
    CounterRng rng{13};
    for (int t = 0; t < 3; ++t) {
      Vector a(4), b(4);
      for (int i = 0; i < 4; ++i) {
        a[i] = rng.uniform(-1.0, 1.0, t, i, 0);
        b[i] = rng.uniform(-1.0, 1.0, t, i, 1);
      }
      const double left = a.dot(rom_hessian_vec(rom, sol, b));
      const double right = b.dot(rom_hessian_vec(rom, sol, a));
      CHECK(std::abs(left - right) <= 1e-9 * std::max(1.0, std::abs(left)));
    }
  }
  SUBCASE("Theta-only objective") {
    FomSystem plain = bench.fom;
    plain.objective.j.components.clear();
    plain.objective.j.thetas.clear();
    plain.objective.k.components.clear();
    plain.objective.k.thetas.clear();
    RbSpace pr2, du2;
    const FomSolution s1 = plain.solve(mu1);
    extend_basis(pr2, s1.u, plain.product);
    extend_basis(du2, s1.u, plain.product);  // dual solve is zero; reuse primal
    const GlobalRom rom2 = build_rom(plain, pr2, du2, RomVariant::Ncd);
    const RomSolution sol2 = rom_solve(rom2, mu);
    const Vector heta = rom_hessian_vec(rom2, sol2, eta);
    CHECK((heta - plain.objective.theta_hessian(mu) * eta).norm() < 1e-10);
  }
}

TEST_CASE("petrov-galerkin variant") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4), mu2(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  mu2 << 2.2, 0.9, 1.1, 3.0;
  enrich_lagrange(fom, v_pr, v_du, mu1);
  enrich_lagrange(fom, v_pr, v_du, mu2);

  SUBCASE("with identical spaces PG coincides with the standard variant") {
    RbSpace both;
    extend_basis(both, v_pr.basis, fom.product);
    extend_basis(both, v_du.basis, fom.product);
    const GlobalRom pg = build_rom(fom, both, both, RomVariant::PetrovGalerkin);
    const GlobalRom std_rom = build_rom(fom, both, both, RomVariant::Standard);
    Vector mu(4);
    mu << 1.3, 2.8, 1.7, 2.2;
    const RomSolution pg_sol = rom_solve(pg, mu);
    const RomSolution std_sol = rom_solve(std_rom, mu);
    CHECK((pg_sol.u - std_sol.u).norm() < 1e-12 * std_sol.u.norm());
    CHECK(pg_sol.value == doctest::Approx(std_sol.value).epsilon(1e-12));
    const Vector gpg = rom_gradient(pg, pg_sol, GradientMode::Pg);
    const Vector gstd = rom_gradient(std_rom, std_sol, GradientMode::Inexact);
    CHECK((gpg - gstd).norm() < 1e-12 * std::max(1.0, gstd.norm()));
  }
  SUBCASE("test-space interchange zeroes the correction term") {
    const GlobalRom pg = build_rom(fom, v_pr, v_du, RomVariant::PetrovGalerkin);
    Vector mu(4);
    mu << 1.6, 1.2, 2.7, 1.9;
    const RomSolution sol = rom_solve(pg, mu);
    const Vector u_fine = v_pr.reconstruct(sol.u);
    const Vector p_fine = v_du.reconstruct(sol.p);
    const double corr = fom.primal_residual(mu, u_fine).dot(p_fine);
    CHECK(std::abs(corr) < 1e-10);
  }
}

TEST_CASE("estimators") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  std::vector<Vector> snapshots =
      random_mus(ParameterBox{Vector::Constant(4, 0.5), Vector::Constant(4, 4.0)}, 3, 19);
  for (const auto& mu : snapshots) enrich_lagrange(fom, v_pr, v_du, mu);
  const GlobalRom rom = build_rom(fom, v_pr, v_du, RomVariant::Ncd, true);
  const GlobalRom rom_classic = build_rom(fom, v_pr, v_du, RomVariant::Ncd, false);

  SUBCASE("estimator vanishes at snapshots") {
    const RomSolution sol = rom_solve(rom, snapshots[0]);
    CHECK(estimate(rom, sol, EstimatorQuantity::Primal) < 1e-10);
  }
  SUBCASE("stable and classic assemblies agree") {
    Vector mu(4);
    mu << 1.4, 2.9, 0.9, 2.1;
    const RomSolution sol = rom_solve(rom, mu);
    const RomSolution sol2 = rom_solve(rom_classic, mu);
    for (auto q : {EstimatorQuantity::Primal, EstimatorQuantity::Dual,
                   EstimatorQuantity::FunctionalNcd}) {
      const double e1 = estimate(rom, sol, q);
      const double e2 = estimate(rom_classic, sol2, q);
      CHECK(e1 == doctest::Approx(e2).epsilon(1e-6));
    }
  }
  SUBCASE("NCD functional estimator follows its defining formula") {
    Vector mu(4);
    mu << 2.4, 1.1, 1.8, 3.2;
    const RomSolution sol = rom_solve(rom, mu);
    const double alpha = rom.coercivity_lb(mu);
    const double delta_pr = rom.primal_residual_norm(mu, sol.u) / alpha;
    const double r_du = rom.dual_residual_norm(mu, sol.u, sol.p);
    const double expected = delta_pr * r_du + delta_pr * delta_pr * rom.continuity_k(mu);
    CHECK(estimate(rom, sol, EstimatorQuantity::FunctionalNcd) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("reliability on validation parameters") {
    const auto validation =
        random_mus(ParameterBox{Vector::Constant(4, 0.5), Vector::Constant(4, 4.0)}, 10, 23);
    const GlobalRom std_rom = build_rom(fom, v_pr, v_du, RomVariant::Standard);
    for (const auto& mu : validation) {
      const FomSolution truth = fom.solve(mu);
      const RomSolution sol = rom_solve(rom, mu);
      const Vector u_fine = v_pr.reconstruct(sol.u);
      const Vector p_fine = v_du.reconstruct(sol.p);
      const double err_pr = fom.product_norm(truth.u - u_fine);
      const double err_du = fom.product_norm(truth.p - p_fine);
      CHECK(err_pr <= estimate(rom, sol, EstimatorQuantity::Primal) * (1 + 1e-9));
      CHECK(err_du <= estimate(rom, sol, EstimatorQuantity::Dual) * (1 + 1e-9));
      const double err_j_ncd = std::abs(truth.value - sol.value);
      CHECK(err_j_ncd <= estimate(rom, sol, EstimatorQuantity::FunctionalNcd) * (1 + 1e-9));
      const RomSolution sol_std = rom_solve(std_rom, mu);
      const double err_j_std = std::abs(truth.value - sol_std.value);
      CHECK(err_j_std <= estimate(std_rom, sol_std, EstimatorQuantity::Functional) * (1 + 1e-9));
      // Gradient estimator reliability.
      const Vector g_inexact = rom_gradient(std_rom, sol_std, GradientMode::Inexact);
      CHECK((truth.gradient - g_inexact).norm() <=
            estimate(std_rom, sol_std, EstimatorQuantity::GradientStandard) * (1 + 1e-9));
      const Vector g_ncd = rom_gradient(rom, sol, GradientMode::NcdAdjoint);
      CHECK((truth.gradient - g_ncd).norm() <=
            estimate(rom, sol, EstimatorQuantity::GradientNcdAdjoint) * (1 + 1e-9));
      CHECK((truth.gradient - g_ncd).norm() <=
            estimate(rom, sol, EstimatorQuantity::GradientNcdSens) * (1 + 1e-9));
    }
  }
}

TEST_CASE("parameter estimator") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  Vector mu_d(4);
  mu_d << 1.5, 2.0, 1.0, 2.5;

  SUBCASE("zero at a stationary interior point with the exact gradient") {
    const FomSolution sol = fom.solve(mu_d);
    const ParameterEstimate est = parameter_estimate(fom, mu_d, sol.gradient);
    CHECK(est.second_order_verified);
    CHECK(est.value < 1e-7);
  }
  SUBCASE("second-order condition failure is reported") {
    FomSystem concave = bench.fom;
    concave.objective.theta_hessian = [](const Vector& mu) -> Matrix {
      return -Matrix::Identity(mu.size(), mu.size());
    };
    const FomSolution sol = concave.solve(mu_d);
    const ParameterEstimate est = parameter_estimate(concave, mu_d, sol.gradient);
    CHECK(!est.second_order_verified);
  }
}

TEST_CASE("goal-oriented greedy reduces the estimator") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  const auto train =
      random_mus(ParameterBox{Vector::Constant(4, 0.5), Vector::Constant(4, 4.0)}, 12, 3);
  RbSpace v_pr, v_du;
  const GreedyResult result = goal_oriented_greedy(fom, v_pr, v_du, train, 5, 1e-12);
  CHECK(v_pr.dim() >= 4);
  REQUIRE(result.steps.size() >= 3);
  CHECK(result.steps.back().max_estimate < result.steps[1].max_estimate);
}

TEST_CASE("rom serialization round trip") {
  BenchmarkSystem bench = bench4();
  const FomSystem& fom = bench.fom;
  RbSpace v_pr, v_du;
  Vector mu1(4);
  mu1 << 1.0, 2.0, 3.0, 1.5;
  enrich_lagrange(fom, v_pr, v_du, mu1);
  const GlobalRom rom = build_rom(fom, v_pr, v_du, RomVariant::Ncd);
  const std::string path = "rom_blob_test.json";
  save_rom(rom, path);
  const GlobalRom loaded = load_rom(fom, path);
  Vector mu(4);
  mu << 2.0, 1.4, 1.1, 2.6;
  const RomSolution a = rom_solve(rom, mu);
  const RomSolution b = rom_solve(loaded, mu);
  CHECK(a.value == doctest::Approx(b.value).epsilon(1e-14));
  CHECK(estimate(rom, a, EstimatorQuantity::FunctionalNcd) ==
        doctest::Approx(estimate(loaded, b, EstimatorQuantity::FunctionalNcd)).epsilon(1e-12));
  std::remove(path.c_str());
}
