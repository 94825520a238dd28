#pragma once

// Reference computations written directly from definitions, used to check the
// library's optimized paths.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

namespace knas::oracle {

using Ranges = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

inline Eigen::MatrixXd gram(const Eigen::MatrixXd& g) {
  const Eigen::Index n = g.rows();
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0;
      for (Eigen::Index p = 0; p < g.cols(); ++p) s += g(i, p) * g(j, p);
      h(i, j) = s;
    }
  return h;
}

inline double mean_entries(const Eigen::MatrixXd& h) {
  double s = 0;
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    for (Eigen::Index j = 0; j < h.cols(); ++j) s += h(i, j);
  return s / static_cast<double>(h.size());
}

// Σ_{i,j} Σ_{p in tensor} g_ip g_jp / n², averaged over tensors.
inline double layer_mean(const Eigen::MatrixXd& g, const Ranges& cols) {
  const double n = static_cast<double>(g.rows());
  double total = 0;
  for (const auto& [b, e] : cols) {
    double s = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.rows(); ++j)
        for (Eigen::Index p = b; p < e; ++p) s += g(i, p) * g(j, p);
    total += s / (n * n);
  }
  return total / static_cast<double>(cols.size());
}

// Expectation of the m-coordinate layer estimator: each coordinate of a
// tensor of size s is kept with probability min(m, s) / s.
inline double layer_sampled_expectation(const Eigen::MatrixXd& g, const Ranges& cols, int m) {
  const double n = static_cast<double>(g.rows());
  double total = 0;
  for (const auto& [b, e] : cols) {
    const double s = static_cast<double>(e - b);
    double sum = 0;
    for (Eigen::Index p = b; p < e; ++p) {
      const double c = g.col(p).sum();
      sum += c * c;
    }
    total += std::min(static_cast<double>(m), s) / s * sum / (n * n);
  }
  return total / static_cast<double>(cols.size());
}

// Expected split-halves value over every ordering of the n examples, with all
// coordinates used.
inline double split_expectation(const Eigen::MatrixXd& g, const Ranges& cols) {
  const Eigen::Index n = g.rows(), half = n / 2;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  double total = 0;
  long count = 0;
  do {
    double per_tensor = 0;
    for (const auto& [b, e] : cols) {
      double s = 0;
      for (Eigen::Index p = b; p < e; ++p)
        for (Eigen::Index i = 0; i < half; ++i)
          s += g(perm[static_cast<std::size_t>(i)], p) * g(perm[static_cast<std::size_t>(i + half)], p);
      per_tensor += s / static_cast<double>(e - b);
    }
    total += per_tensor / static_cast<double>(cols.size());
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total / static_cast<double>(count);
}

// Characteristic polynomial coefficients by Faddeev-LeVerrier:
// det(λI - A) = λ^n + c[1] λ^(n-1) + ... + c[n].
inline std::vector<double> char_poly(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  std::vector<double> c(static_cast<std::size_t>(n) + 1, 0.0);
  c[0] = 1.0;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    m = a * m + c[static_cast<std::size_t>(k - 1)] * Eigen::MatrixXd::Identity(n, n);
    c[static_cast<std::size_t>(k)] = -(a * m).trace() / static_cast<double>(k);
  }
  return c;
}

inline double poly_eval(const std::vector<double>& c, double x) {
  double v = 0;
  for (double coef : c) v = v * x + coef;
  return v;
}

// Smallest root of the characteristic polynomial of a symmetric PSD matrix:
// scan [lo, hi] for the first sign change, then bisect.
inline double smallest_eigenvalue(const Eigen::MatrixXd& a) {
  const std::vector<double> c = char_poly(a);
  const double hi = a.trace() + 1.0;
  const double lo = -1e-6 * hi;
  const int steps = 200000;
  double prev_x = lo, prev = poly_eval(c, lo);
  for (int s = 1; s <= steps; ++s) {
    const double x = lo + (hi - lo) * s / steps;
    const double v = poly_eval(c, x);
    if (prev == 0.0) return prev_x;
    if ((prev < 0) != (v < 0)) {
      double a0 = prev_x, b0 = x, fa = prev;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a0 + b0);
        const double fm = poly_eval(c, mid);
        if ((fm < 0) == (fa < 0)) {
          a0 = mid;
          fa = fm;
        } else {
          b0 = mid;
        }
      }
      return 0.5 * (a0 + b0);
    }
    prev_x = x;
    prev = v;
  }
  return NAN;
}

// y(t) = y* + exp(-X Xᵀ t) (y(0) - y*), loss ‖y* - y(t)‖².
inline double linear_flow_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y0, const Eigen::VectorXd& target,
                               double t) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
  const Eigen::VectorXd r0 = es.eigenvectors().transpose() * (y0 - target);
  const Eigen::VectorXd decay = (-es.eigenvalues().array() * t).exp();
  return (decay.array() * r0.array()).matrix().squaredNorm();
}

// Pearson correlation of average ranks, straight from the definition.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double below = 0, equal = 0;
    for (double w : v) {
      below += w < v[i];
      equal += w == v[i];
    }
    r[i] = below + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

// Two-sided p-value over every permutation of y.
inline double spearman_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
  const double rho = std::abs(spearman(x, y));
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  long hits = 0, total = 0;
  do {
    std::vector<double> yp(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) yp[i] = y[perm[i]];
    hits += std::abs(spearman(x, yp)) >= rho - 1e-12;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace knas::oracle
