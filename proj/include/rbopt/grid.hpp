#pragma once

#include <array>
#include <vector>

#include "rbopt/params.hpp"

namespace rbopt {

enum class BoundaryType { Dirichlet, Robin };

/// Structured quadrilateral grid on [0,1]^2 with bilinear (Q1) elements.
/// Vertices are numbered lexicographically, v = iy*(n+1) + ix; elements
/// e = ey*n + ex with counter-clockwise corner order
/// (ex,ey), (ex+1,ey), (ex+1,ey+1), (ex,ey+1).
struct StructuredGrid {
  int n = 0;                       // cells per axis
  BoundaryType boundary = BoundaryType::Dirichlet;
  std::vector<bool> dirichlet;     // per vertex
  std::vector<int> dof_map;        // vertex -> dof index, -1 for constrained
  int n_dofs = 0;

  int n_vertices() const { return (n + 1) * (n + 1); }
  int n_elements() const { return n * n; }
  double h() const { return 1.0 / n; }

  int vertex(int ix, int iy) const { return iy * (n + 1) + ix; }

  std::array<int, 4> element_vertices(int e) const {
    const int ex = e % n, ey = e / n;
    return {vertex(ex, ey), vertex(ex + 1, ey), vertex(ex + 1, ey + 1), vertex(ex, ey + 1)};
  }

  std::pair<double, double> vertex_coords(int v) const {
    const int ix = v % (n + 1), iy = v / (n + 1);
    return {ix * h(), iy * h()};
  }

  bool on_boundary(int v) const {
    const int ix = v % (n + 1), iy = v / (n + 1);
    return ix == 0 || iy == 0 || ix == n || iy == n;
  }
};

/// Builds the grid with its dof map; Dirichlet vertices are eliminated.
StructuredGrid build_grid(int cells_per_axis, BoundaryType boundary = BoundaryType::Dirichlet);

/// Scatters a dof vector back to all vertices (zero on Dirichlet nodes).
Vector dofs_to_vertices(const StructuredGrid& grid, const Vector& dof_values);

/// Restricts a per-vertex vector to the free dofs.
Vector vertices_to_dofs(const StructuredGrid& grid, const Vector& vertex_values);

}  // namespace rbopt
