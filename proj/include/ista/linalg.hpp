#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace ista {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Eigenpairs of a symmetric matrix sorted by non-increasing eigenvalue.
struct SortedEigen {
  Vector values;
  Matrix vectors;  // columns
};

inline SortedEigen sorted_symmetric_eigen(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  const Eigen::Index n = sym.rows();
  SortedEigen out{Vector(n), Matrix(n, n)};
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = solver.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return out;
}

/// Fixes the sign of a singular/eigen vector pair so that the entry of
/// largest magnitude in `u` is positive. Makes factorizations reproducible
/// across solver paths.
template <class A, class B>
void canonical_sign(A&& u, B&& v) {
  Eigen::Index arg = 0;
  u.cwiseAbs().maxCoeff(&arg);
  if (u(arg) < 0) {
    u = -u;
    v = -v;
  }
}

inline bool all_finite(const double* p, std::size_t n) {
  return std::all_of(p, p + n, [](double x) { return std::isfinite(x); });
}

}  // namespace ista
