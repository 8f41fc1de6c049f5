#include "rbopt/thermal_block.hpp"

#include <numeric>

namespace rbopt {

namespace {
int block_of_cell(int cell_x, int cell_y, int resolution, int blocks_x, int blocks_y) {
  int bx = cell_x * blocks_x / resolution;
  int by = cell_y * blocks_y / resolution;
  if (bx >= blocks_x) bx = blocks_x - 1;
  if (by >= blocks_y) by = blocks_y - 1;
  return by * blocks_x + bx;
}
}  // namespace

PiecewiseConstantField build_block_field(const ThermalBlockSpec& spec, int field_index) {
  require(field_index >= 0 && field_index < static_cast<int>(spec.fields.size()),
          "build_block_field: field index out of range");
  const BlockFieldSpec& fs = spec.fields[static_cast<size_t>(field_index)];
  const int N = fs.resolution;
  CounterRng rng{spec.seed};
  Vector values(static_cast<Eigen::Index>(N) * N);
  for (int cy = 0; cy < N; ++cy)
    for (int cx = 0; cx < N; ++cx) {
      const int cell = cy * N + cx;
      const int block = block_of_cell(cx, cy, N, spec.blocks_x, spec.blocks_y);
      double v;
      switch (fs.law) {
        case FieldLaw::Constant: v = fs.lo; break;
        case FieldLaw::Uniform:
          v = rng.uniform(fs.lo, fs.hi, static_cast<uint64_t>(field_index),
                          static_cast<uint64_t>(block), static_cast<uint64_t>(cell));
          break;
        default:
          v = rng.truncated_normal(fs.lo, fs.hi, static_cast<uint64_t>(field_index),
                                   static_cast<uint64_t>(block), static_cast<uint64_t>(cell));
      }
      values[cell] = v;
    }
  return PiecewiseConstantField(N, std::move(values));
}

PiecewiseConstantField restrict_to_block(const PiecewiseConstantField& field, int blocks_x,
                                         int blocks_y, int bx, int by) {
  const int N = field.resolution;
  Vector values = Vector::Zero(static_cast<Eigen::Index>(N) * N);
  for (int cy = 0; cy < N; ++cy)
    for (int cx = 0; cx < N; ++cx) {
      if (block_of_cell(cx, cy, N, blocks_x, blocks_y) == by * blocks_x + bx)
        values[cy * N + cx] = field.values[cy * N + cx];
    }
  return PiecewiseConstantField(N, std::move(values));
}

AffineOperator build_thermal_block(const StructuredGrid& grid, const ThermalBlockSpec& spec) {
  require(!spec.fields.empty() && spec.fields.size() <= 2,
          "build_thermal_block: one or two fields expected");
  AffineOperator op;
  op.psd_components = true;
  int q = 0;
  for (int f = 0; f < static_cast<int>(spec.fields.size()); ++f) {
    const PiecewiseConstantField field = build_block_field(spec, f);
    for (int by = 0; by < spec.blocks_y; ++by)
      for (int bx = 0; bx < spec.blocks_x; ++bx) {
        const PiecewiseConstantField restricted =
            restrict_to_block(field, spec.blocks_x, spec.blocks_y, bx, by);
        op.components.push_back(
            assemble_matrix(grid, restricted, ComponentKind::Diffusion));
        op.thetas.push_back(ThetaFunction::coordinate(q));
        ++q;
      }
  }
  return op;
}

std::pair<double, double> coefficient_extremes(const ThermalBlockSpec& spec, const Vector& mu) {
  require(mu.size() == spec.parameter_dim(), "coefficient_extremes: parameter dim mismatch");
  // Evaluate on the common refinement of the field grids.
  int N = 1;
  for (const auto& fs : spec.fields) N = std::lcm(N, fs.resolution);
  std::vector<PiecewiseConstantField> fields;
  for (int f = 0; f < static_cast<int>(spec.fields.size()); ++f)
    fields.push_back(build_block_field(spec, f));
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const int nb = spec.n_blocks();
  for (int cy = 0; cy < N; ++cy)
    for (int cx = 0; cx < N; ++cx) {
      const double x = (cx + 0.5) / N, y = (cy + 0.5) / N;
      double v = 0.0;
      for (int f = 0; f < static_cast<int>(fields.size()); ++f) {
        const int block = block_of_cell(cx, cy, N, spec.blocks_x, spec.blocks_y);
        v += mu[f * nb + block] * fields[static_cast<size_t>(f)].at(x, y);
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return {lo, hi};
}

}  // namespace rbopt
