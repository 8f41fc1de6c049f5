#include "rbopt/assembly.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <vector>

#include <Eigen/Sparse>

namespace rbopt {

namespace {

// Q1 shape functions on the unit reference square, corner order
// (0,0), (1,0), (1,1), (0,1).
double shape(int i, double x, double y) {
  switch (i) {
    case 0: return (1 - x) * (1 - y);
    case 1: return x * (1 - y);
    case 2: return x * y;
    default: return (1 - x) * y;
  }
}

std::array<double, 2> shape_grad(int i, double x, double y) {
  switch (i) {
    case 0: return {-(1 - y), -(1 - x)};
    case 1: return {1 - y, -x};
    case 2: return {y, x};
    default: return {-y, 1 - x};
  }
}

struct SubCellRule {
  // 2x2 Gauss points mapped into the sub-cell, with weights.
  std::array<std::array<double, 2>, 4> points;
  double weight;  // per point, equal weights
};

SubCellRule make_rule(double ax, double ay, double s) {
  const double off = 0.5 / std::sqrt(3.0);
  SubCellRule rule;
  int k = 0;
  for (int gy = 0; gy < 2; ++gy)
    for (int gx = 0; gx < 2; ++gx) {
      const double px = ax + s * (0.5 + (gx == 0 ? -off : off));
      const double py = ay + s * (0.5 + (gy == 0 ? -off : off));
      rule.points[k++] = {px, py};
    }
  rule.weight = 0.25 * s * s;
  return rule;
}

// Exact integrals of grad(Ni).grad(Nj) resp. Ni*Nj over one sub-cell of the
// reference square.
Eigen::Matrix4d subcell_matrix(ComponentKind kind, double ax, double ay, double s) {
  const SubCellRule rule = make_rule(ax, ay, s);
  Eigen::Matrix4d local = Eigen::Matrix4d::Zero();
  for (const auto& p : rule.points) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double v;
        if (kind == ComponentKind::Diffusion) {
          const auto gi = shape_grad(i, p[0], p[1]);
          const auto gj = shape_grad(j, p[0], p[1]);
          v = gi[0] * gj[0] + gi[1] * gj[1];
        } else {
          v = shape(i, p[0], p[1]) * shape(j, p[0], p[1]);
        }
        local(i, j) += rule.weight * v;
      }
  }
  return local;
}

Eigen::Vector4d subcell_load(double ax, double ay, double s) {
  const SubCellRule rule = make_rule(ax, ay, s);
  Eigen::Vector4d local = Eigen::Vector4d::Zero();
  for (const auto& p : rule.points)
    for (int i = 0; i < 4; ++i) local[i] += rule.weight * shape(i, p[0], p[1]);
  return local;
}

void check_compat(const StructuredGrid& grid, const PiecewiseConstantField& field) {
  const int n = grid.n, N = field.resolution;
  require(N % n == 0 || n % N == 0,
          "assembly: field resolution and grid resolution are incompatible");
}

}  // namespace

SparseMatrix assemble_matrix(const StructuredGrid& grid, const PiecewiseConstantField& field,
                             ComponentKind kind, const std::function<bool(int)>& element_filter) {
  require(kind != ComponentKind::Rhs, "assemble_matrix: use assemble_rhs for load vectors");
  check_compat(grid, field);
  const int n = grid.n, N = field.resolution;
  const double h = grid.h();
  // Mass scales with the element area; stiffness is scale-invariant in 2d.
  const double scale = kind == ComponentKind::L2 ? h * h : 1.0;

  const int m = N >= n ? N / n : 1;  // data sub-cells per element axis
  std::vector<Eigen::Matrix4d> sub(m * m);
  for (int sy = 0; sy < m; ++sy)
    for (int sx = 0; sx < m; ++sx)
      sub[sy * m + sx] =
          subcell_matrix(kind, static_cast<double>(sx) / m, static_cast<double>(sy) / m,
                         1.0 / m);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(grid.n_elements()) * 16);
  for (int e = 0; e < grid.n_elements(); ++e) {
    if (element_filter && !element_filter(e)) continue;
    const int ex = e % n, ey = e / n;
    Eigen::Matrix4d local = Eigen::Matrix4d::Zero();
    if (N >= n) {
      for (int sy = 0; sy < m; ++sy)
        for (int sx = 0; sx < m; ++sx) {
          const double a = field(ex * m + sx, ey * m + sy);
          if (a != 0.0) local += a * sub[sy * m + sx];
        }
    } else {
      // Element lies inside one data cell.
      const double x = (ex + 0.5) * h, y = (ey + 0.5) * h;
      local = field.at(x, y) * sub[0];
    }
    local *= scale;
    const auto verts = grid.element_vertices(e);
    for (int i = 0; i < 4; ++i) {
      const int di = grid.dof_map[verts[i]];
      if (di < 0) continue;
      for (int j = 0; j < 4; ++j) {
        const int dj = grid.dof_map[verts[j]];
        if (dj < 0) continue;
        triplets.emplace_back(dj, di, local(j, i));
      }
    }
  }
  SparseMatrix out(grid.n_dofs, grid.n_dofs);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

Vector assemble_rhs(const StructuredGrid& grid, const PiecewiseConstantField& field,
                    const std::function<bool(int)>& element_filter) {
  check_compat(grid, field);
  const int n = grid.n, N = field.resolution;
  const double h = grid.h();
  const int m = N >= n ? N / n : 1;
  std::vector<Eigen::Vector4d> sub(m * m);
  for (int sy = 0; sy < m; ++sy)
    for (int sx = 0; sx < m; ++sx)
      sub[sy * m + sx] =
          subcell_load(static_cast<double>(sx) / m, static_cast<double>(sy) / m, 1.0 / m);

  Vector out = Vector::Zero(grid.n_dofs);
  for (int e = 0; e < grid.n_elements(); ++e) {
    if (element_filter && !element_filter(e)) continue;
    const int ex = e % n, ey = e / n;
    Eigen::Vector4d local = Eigen::Vector4d::Zero();
    if (N >= n) {
      for (int sy = 0; sy < m; ++sy)
        for (int sx = 0; sx < m; ++sx) {
          const double f = field(ex * m + sx, ey * m + sy);
          if (f != 0.0) local += f * sub[sy * m + sx];
        }
    } else {
      const double x = (ex + 0.5) * h, y = (ey + 0.5) * h;
      local = field.at(x, y) * sub[0];
    }
    local *= h * h;
    const auto verts = grid.element_vertices(e);
    for (int i = 0; i < 4; ++i) {
      const int di = grid.dof_map[verts[i]];
      if (di >= 0) out[di] += local[i];
    }
  }
  return out;
}

Vector apply_restricted(const StructuredGrid& grid, const PiecewiseConstantField& field,
                        ComponentKind kind, const std::vector<int>& elements,
                        const Vector& dof_vector) {
  require(kind != ComponentKind::Rhs, "apply_restricted: bilinear kinds only");
  check_compat(grid, field);
  const int n = grid.n, N = field.resolution;
  const double h = grid.h();
  const double scale = kind == ComponentKind::L2 ? h * h : 1.0;
  const int m = N >= n ? N / n : 1;
  std::vector<Eigen::Matrix4d> sub(m * m);
  for (int sy = 0; sy < m; ++sy)
    for (int sx = 0; sx < m; ++sx)
      sub[sy * m + sx] = subcell_matrix(kind, static_cast<double>(sx) / m,
                                        static_cast<double>(sy) / m, 1.0 / m);
  Vector out = Vector::Zero(grid.n_dofs);
  for (int e : elements) {
    const int ex = e % n, ey = e / n;
    Eigen::Matrix4d local = Eigen::Matrix4d::Zero();
    if (N >= n) {
      for (int sy = 0; sy < m; ++sy)
        for (int sx = 0; sx < m; ++sx) {
          const double a = field(ex * m + sx, ey * m + sy);
          if (a != 0.0) local += a * sub[sy * m + sx];
        }
    } else {
      const double x = (ex + 0.5) * h, y = (ey + 0.5) * h;
      local = field.at(x, y) * sub[0];
    }
    local *= scale;
    const auto verts = grid.element_vertices(e);
    Eigen::Vector4d values = Eigen::Vector4d::Zero();
    for (int i = 0; i < 4; ++i) {
      const int di = grid.dof_map[verts[i]];
      if (di >= 0) values[i] = dof_vector[di];
    }
    const Eigen::Vector4d result = local * values;
    for (int i = 0; i < 4; ++i) {
      const int di = grid.dof_map[verts[i]];
      if (di >= 0) out[di] += result[i];
    }
  }
  return out;
}

SparseMatrix assemble_boundary_mass(const StructuredGrid& grid) {
  const int n = grid.n;
  const double h = grid.h();
  std::vector<Eigen::Triplet<double>> triplets;
  auto add_edge = [&](int va, int vb) {
    const int da = grid.dof_map[va], db = grid.dof_map[vb];
    const double m00 = h / 3.0, m01 = h / 6.0;
    if (da >= 0) triplets.emplace_back(da, da, m00);
    if (db >= 0) triplets.emplace_back(db, db, m00);
    if (da >= 0 && db >= 0) {
      triplets.emplace_back(da, db, m01);
      triplets.emplace_back(db, da, m01);
    }
  };
  for (int i = 0; i < n; ++i) {
    add_edge(grid.vertex(i, 0), grid.vertex(i + 1, 0));
    add_edge(grid.vertex(i, n), grid.vertex(i + 1, n));
    add_edge(grid.vertex(0, i), grid.vertex(0, i + 1));
    add_edge(grid.vertex(n, i), grid.vertex(n, i + 1));
  }
  SparseMatrix out(grid.n_dofs, grid.n_dofs);
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

Vector assemble_boundary_rhs(const StructuredGrid& grid, double g) {
  const int n = grid.n;
  const double h = grid.h();
  Vector out = Vector::Zero(grid.n_dofs);
  auto add_edge = [&](int va, int vb) {
    const int da = grid.dof_map[va], db = grid.dof_map[vb];
    if (da >= 0) out[da] += g * h / 2.0;
    if (db >= 0) out[db] += g * h / 2.0;
  };
  for (int i = 0; i < n; ++i) {
    add_edge(grid.vertex(i, 0), grid.vertex(i + 1, 0));
    add_edge(grid.vertex(i, n), grid.vertex(i + 1, n));
    add_edge(grid.vertex(0, i), grid.vertex(0, i + 1));
    add_edge(grid.vertex(n, i), grid.vertex(n, i + 1));
  }
  return out;
}

void write_matrix_market(const SparseMatrix& matrix, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_matrix_market: cannot open " + path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << matrix.rows() << " " << matrix.cols() << " " << matrix.nonZeros() << "\n";
  out.precision(17);
  for (int k = 0; k < matrix.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix, k); it; ++it)
      out << it.row() + 1 << " " << it.col() + 1 << " " << it.value() << "\n";
}

}  // namespace rbopt
