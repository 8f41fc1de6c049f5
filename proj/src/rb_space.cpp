#include "rbopt/rb_space.hpp"

#include <cmath>

namespace rbopt {

namespace {

template <class ProductApply>
int gram_schmidt(Matrix& basis, const Matrix& new_vectors, ProductApply&& apply, double tol) {
  int accepted = 0;
  for (Eigen::Index c = 0; c < new_vectors.cols(); ++c) {
    Vector v = new_vectors.col(c);
    const double norm0 = std::sqrt(std::max(0.0, v.dot(apply(v))));
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index b = 0; b < basis.cols(); ++b) {
        const Vector pb = basis.col(b);
        v -= pb.dot(apply(v)) * pb;
      }
    }
    const double norm1 = std::sqrt(std::max(0.0, v.dot(apply(v))));
    if (norm1 < tol * norm0) continue;
    basis.conservativeResize(new_vectors.rows(), basis.cols() + 1);
    basis.col(basis.cols() - 1) = v / norm1;
    ++accepted;
  }
  return accepted;
}

}  // namespace

int extend_basis(RbSpace& space, const Matrix& new_vectors, const SparseMatrix& product,
                 double tol) {
  if (space.basis.size() == 0) space.basis.resize(new_vectors.rows(), 0);
  return gram_schmidt(space.basis, new_vectors,
                      [&](const Vector& v) -> Vector { return product * v; }, tol);
}

int extend_basis_dense(Matrix& basis, const Matrix& new_vectors, const Matrix& product,
                       double tol) {
  if (basis.size() == 0) basis.resize(new_vectors.rows(), 0);
  return gram_schmidt(basis, new_vectors,
                      [&](const Vector& v) -> Vector { return product * v; }, tol);
}

}  // namespace rbopt
