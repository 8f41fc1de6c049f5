#include "rbopt/grid.hpp"

namespace rbopt {

StructuredGrid build_grid(int cells_per_axis, BoundaryType boundary) {
  require(cells_per_axis >= 1, "build_grid: cells_per_axis must be >= 1");
  StructuredGrid grid;
  grid.n = cells_per_axis;
  grid.boundary = boundary;
  grid.dirichlet.assign(grid.n_vertices(), false);
  grid.dof_map.assign(grid.n_vertices(), -1);

  int next = 0;
  for (int v = 0; v < grid.n_vertices(); ++v) {
    const bool constrained = boundary == BoundaryType::Dirichlet && grid.on_boundary(v);
    grid.dirichlet[v] = constrained;
    if (!constrained) grid.dof_map[v] = next++;
  }
  grid.n_dofs = next;
  return grid;
}

Vector dofs_to_vertices(const StructuredGrid& grid, const Vector& dof_values) {
  require(dof_values.size() == grid.n_dofs, "dofs_to_vertices: size mismatch");
  Vector out = Vector::Zero(grid.n_vertices());
  for (int v = 0; v < grid.n_vertices(); ++v)
    if (grid.dof_map[v] >= 0) out[v] = dof_values[grid.dof_map[v]];
  return out;
}

Vector vertices_to_dofs(const StructuredGrid& grid, const Vector& vertex_values) {
  require(vertex_values.size() == grid.n_vertices(), "vertices_to_dofs: size mismatch");
  Vector out(grid.n_dofs);
  for (int v = 0; v < grid.n_vertices(); ++v)
    if (grid.dof_map[v] >= 0) out[grid.dof_map[v]] = vertex_values[v];
  return out;
}

}  // namespace rbopt
