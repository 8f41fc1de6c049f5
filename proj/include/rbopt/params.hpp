#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <stdexcept>
#include <string>

namespace rbopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

/// Solver-level failure that callers may want to catch and diagnose
/// (e.g. the Petrov-Galerkin reduced system losing invertibility).
class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(const std::string& what) : std::runtime_error(what) {}
};

/// Box constraints [lower, upper] on the parameter domain.
struct ParameterBox {
  Vector lower;
  Vector upper;

  ParameterBox() = default;
  ParameterBox(Vector lo, Vector up) : lower(std::move(lo)), upper(std::move(up)) {
    require(lower.size() == upper.size(), "ParameterBox: dimension mismatch");
    require(lower.size() >= 1, "ParameterBox: dimension must be >= 1");
    require((lower.array() <= upper.array()).all(), "ParameterBox: lower > upper");
  }

  Eigen::Index dim() const { return lower.size(); }

  bool contains(const Vector& mu, double tol = 0.0) const {
    return (mu.array() >= lower.array() - tol).all() &&
           (mu.array() <= upper.array() + tol).all();
  }

  Vector midpoint() const { return 0.5 * (lower + upper); }
};

/// Componentwise clipping onto the box. Lipschitz with constant one.
inline Vector project_to_box(const Vector& mu, const ParameterBox& box) {
  require(mu.size() == box.dim(), "project_to_box: dimension mismatch");
  return mu.cwiseMax(box.lower).cwiseMin(box.upper);
}

/// First-order criticality measure ||mu - P(mu - grad)||_2.
inline double foc_measure(const Vector& mu, const Vector& gradient, const ParameterBox& box) {
  return (mu - project_to_box(mu - gradient, box)).norm();
}

}  // namespace rbopt
