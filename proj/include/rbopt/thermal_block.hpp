#pragma once

#include <cstdint>
#include <vector>

#include "rbopt/affine.hpp"
#include "rbopt/assembly.hpp"
#include "rbopt/field.hpp"
#include "rbopt/grid.hpp"
#include "rbopt/rng.hpp"

namespace rbopt {

enum class FieldLaw { Constant, Uniform, Normal };

struct BlockFieldSpec {
  int resolution = 1;
  FieldLaw law = FieldLaw::Constant;
  double lo = 1.0;   // value for Constant; range for Uniform/Normal
  double hi = 1.0;
};

/// p x q thermal block with one or two (multiscale) coefficient fields.
/// Parameter component mu_q scales the restriction of its field to one block;
/// field-0 blocks come first, then field-1 blocks.
struct ThermalBlockSpec {
  int blocks_x = 1;
  int blocks_y = 1;
  std::vector<BlockFieldSpec> fields;  // 1 or 2 entries
  uint64_t seed = 0;

  int n_blocks() const { return blocks_x * blocks_y; }
  int parameter_dim() const { return n_blocks() * static_cast<int>(fields.size()); }
};

/// Full field values; randomness is keyed by (seed, field index,
/// global block index, data cell index), so identical specs reproduce
/// bit-identical fields.
PiecewiseConstantField build_block_field(const ThermalBlockSpec& spec, int field_index);

/// Restriction of a field to block (bx, by): values zeroed outside the block.
PiecewiseConstantField restrict_to_block(const PiecewiseConstantField& field, int blocks_x,
                                         int blocks_y, int bx, int by);

/// Assembled affine stiffness with theta_q(mu) = mu_q.
AffineOperator build_thermal_block(const StructuredGrid& grid, const ThermalBlockSpec& spec);

/// Extremes of the scalar coefficient A_mu over all data cells.
std::pair<double, double> coefficient_extremes(const ThermalBlockSpec& spec, const Vector& mu);

}  // namespace rbopt
