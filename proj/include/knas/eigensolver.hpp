#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace knas {

// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations, sorted
// ascending. Only the upper triangle is read. Jacobi keeps small eigenvalues
// accurate relative to the matrix norm, which is what the lambda_min checks
// rely on.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> symmetric_eigenvalues(
    const Eigen::MatrixBase<Derived>& input, int max_sweeps = 64) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (input.rows() != input.cols()) throw std::invalid_argument("symmetric_eigenvalues: matrix is not square");
  const Eigen::Index n = input.rows();
  Mat a = input.template triangularView<Eigen::Upper>();
  a.template triangularView<Eigen::StrictlyLower>() = a.transpose();

  const Scalar norm = a.norm();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const Scalar off = std::sqrt(std::max<Scalar>(a.squaredNorm() - a.diagonal().squaredNorm(), Scalar(0)));
    if (off <= eps * norm || off == Scalar(0)) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        // Skip entries already negligible against both diagonals.
        if (sweep > 3 && std::abs(apq) <= eps * std::abs(a(p, p)) * Scalar(1e-2) &&
            std::abs(apq) <= eps * std::abs(a(q, q)) * Scalar(1e-2)) {
          a(p, q) = a(q, p) = Scalar(0);
          continue;
        }
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        Scalar t = Scalar(1) / (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        if (theta < Scalar(0)) t = -t;
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = Scalar(0);
      }
    }
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d = a.diagonal();
  std::sort(d.data(), d.data() + d.size());
  return d;
}

}  // namespace knas
