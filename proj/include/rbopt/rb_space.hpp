#pragma once

#include "rbopt/params.hpp"

namespace rbopt {

/// Basis vectors (columns) orthonormal w.r.t. a fixed SPD product matrix.
struct RbSpace {
  Matrix basis;  // n_dofs x N

  Eigen::Index dim() const { return basis.cols(); }
  bool empty() const { return basis.cols() == 0; }
  Vector reconstruct(const Vector& coeffs) const { return basis * coeffs; }
};

/// Gram-Schmidt extension against the given product. Vectors whose
/// post-orthogonalization norm drops below `tol` times their original norm
/// are discarded; returns the number of accepted vectors. A second
/// orthogonalization pass keeps the Gram matrix near identity.
int extend_basis(RbSpace& space, const Matrix& new_vectors, const SparseMatrix& product,
                 double tol = 1e-10);

/// Gram-Schmidt with a dense product (small spaces).
int extend_basis_dense(Matrix& basis, const Matrix& new_vectors, const Matrix& product,
                       double tol = 1e-10);

}  // namespace rbopt
