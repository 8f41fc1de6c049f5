#pragma once

#include <functional>
#include <string>

#include "rbopt/field.hpp"
#include "rbopt/grid.hpp"

namespace rbopt {

enum class ComponentKind { Diffusion, L2, Rhs };

/// Assembles a bilinear component (stiffness or weighted mass) for a
/// piecewise constant coefficient. Integration is exact: within each element
/// the coefficient is constant per data sub-cell and the Q1 integrands are
/// integrated with a 2x2 Gauss rule per sub-cell, which is exact for the
/// quadratic polynomials involved. Dirichlet rows/columns are eliminated.
/// `element_filter` (optional) restricts integration to selected elements.
SparseMatrix assemble_matrix(const StructuredGrid& grid, const PiecewiseConstantField& field,
                             ComponentKind kind,
                             const std::function<bool(int)>& element_filter = {});

/// Load vector (f, phi_i) for piecewise constant f, on the free dofs.
Vector assemble_rhs(const StructuredGrid& grid, const PiecewiseConstantField& field,
                    const std::function<bool(int)>& element_filter = {});

/// y = A x with the assembly restricted to the listed elements; used for
/// element-restricted forms a^T(., .) without forming matrices.
Vector apply_restricted(const StructuredGrid& grid, const PiecewiseConstantField& field,
                        ComponentKind kind, const std::vector<int>& elements,
                        const Vector& dof_vector);

/// Boundary mass matrix int_Gamma phi_i phi_j ds over the whole boundary
/// (Robin grids only; with Dirichlet elimination this is empty).
SparseMatrix assemble_boundary_mass(const StructuredGrid& grid);

/// Boundary load int_Gamma g phi_i ds with constant g.
Vector assemble_boundary_rhs(const StructuredGrid& grid, double g);

/// Matrix Market (coordinate, real, general) export.
void write_matrix_market(const SparseMatrix& matrix, const std::string& path);

}  // namespace rbopt
