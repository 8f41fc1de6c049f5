#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <functional>
#include <vector>

#include "rbopt/assembly.hpp"
#include "rbopt/fom.hpp"
#include "rbopt/rng.hpp"
#include "rbopt/thermal_block.hpp"

namespace rbopt::testing {

inline Vector random_mu(const ParameterBox& box, const CounterRng& rng, uint64_t draw) {
  Vector mu(box.dim());
  for (Eigen::Index i = 0; i < box.dim(); ++i)
    mu[i] = rng.uniform(box.lower[i], box.upper[i], draw, static_cast<uint64_t>(i));
  return mu;
}

inline std::vector<Vector> random_mus(const ParameterBox& box, int count, uint64_t seed = 7) {
  CounterRng rng{seed};
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) out.push_back(random_mu(box, rng, static_cast<uint64_t>(i)));
  return out;
}

/// Misfit + Tikhonov objective: J = (sd/2)||u - u_d||_M^2
/// + (1/2) sum si (mu_i - mu_d_i)^2 + offset. M is an L2-type mass matrix on
/// dofs; u_d a dof vector.
inline QuadraticObjective misfit_objective(const SparseMatrix& mass, const Vector& u_d,
                                           double sigma_d, const Vector& sigma_i,
                                           const Vector& mu_d, double offset = 1.0) {
  QuadraticObjective obj;
  const double misfit_const = 0.5 * sigma_d * u_d.dot(mass * u_d) + offset;
  obj.theta = [=](const Vector& mu) {
    return 0.5 * (sigma_i.array() * (mu - mu_d).array().square()).sum() + misfit_const;
  };
  obj.theta_gradient = [=](const Vector& mu) -> Vector {
    return (sigma_i.array() * (mu - mu_d).array()).matrix();
  };
  obj.theta_hessian = [=](const Vector&) -> Matrix { return sigma_i.asDiagonal(); };
  obj.j.components.push_back(-sigma_d * (mass * u_d));
  obj.j.thetas.push_back(ThetaFunction::constant(1.0));
  SparseMatrix half_mass = 0.5 * sigma_d * mass;
  obj.k.components.push_back(half_mass);
  obj.k.thetas.push_back(ThetaFunction::constant(1.0));
  return obj;
}

struct BenchmarkSystem {
  FomSystem fom;
  ThermalBlockSpec spec;
};

/// Small thermal-block optimization problem; u_d is the state at mu_d.
inline BenchmarkSystem make_benchmark(int n_h, int blocks, int n_fields, const ParameterBox& box,
                                      const Vector& mu_d, double sigma_d = 100.0,
                                      double sigma_i_value = 1e-3, uint64_t seed = 42,
                                      int field_res = 16) {
  BenchmarkSystem bench;
  bench.spec.blocks_x = blocks;
  bench.spec.blocks_y = blocks;
  bench.spec.seed = seed;
  for (int f = 0; f < n_fields; ++f) {
    BlockFieldSpec fs;
    fs.resolution = field_res * (f + 1);
    fs.law = f == 0 ? FieldLaw::Uniform : FieldLaw::Normal;
    fs.lo = 0.9;
    fs.hi = 1.1;
    bench.spec.fields.push_back(fs);
  }
  FomSystem& fom = bench.fom;
  fom.grid = build_grid(n_h);
  fom.a = build_thermal_block(fom.grid, bench.spec);
  fom.l.components.push_back(
      assemble_rhs(fom.grid, PiecewiseConstantField::constant(10.0)));
  fom.l.thetas.push_back(ThetaFunction::constant(1.0));
  fom.box = box;
  fom.mu_bar = box.midpoint();
  fom.finalize();

  const Vector u_d = fom.solve_primal(mu_d);
  const Vector sigma_i = Vector::Constant(box.dim(), sigma_i_value);
  fom.objective = misfit_objective(fom.l2_mass, u_d, sigma_d, sigma_i, mu_d);
  return bench;
}

/// Central finite differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& mu,
                          double step_scale = 1e-6) {
  Vector out(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double h = step_scale * std::max(1.0, std::abs(mu[i]));
    Vector lo = mu, hi = mu;
    lo[i] -= h;
    hi[i] += h;
    out[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return out;
}

inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& mu,
                          double step_scale = 1e-6) {
  const Vector f0 = f(mu);
  Matrix out(f0.size(), mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double h = step_scale * std::max(1.0, std::abs(mu[i]));
    Vector lo = mu, hi = mu;
    lo[i] -= h;
    hi[i] += h;
    out.col(i) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return out;
}

}  // namespace rbopt::testing
