#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of them call into the library's solvers.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline double log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& b) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double eta = X.row(i).dot(b);
    // log(1 + e^eta) without overflow
    const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += y(i) * eta - softplus;
  }
  return ll;
}

// Maximizes a function over a box by repeated grid search: 21 points per
// coordinate around the incumbent, then the box shrinks fourfold around the
// best point (2.5 grid steps either side). Stops when the half-width drops
// below `tol`.
inline Eigen::VectorXd grid_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                     Eigen::Index dim, double half_width, double tol) {
  Eigen::VectorXd centre = Eigen::VectorXd::Zero(dim);
  constexpr int kPoints = 21;
  while (half_width > tol) {
    const double step = 2.0 * half_width / (kPoints - 1);
    Eigen::VectorXd best = centre;
    double best_val = f(centre);
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    for (;;) {
      Eigen::VectorXd b(dim);
      for (Eigen::Index j = 0; j < dim; ++j) {
        b(j) = centre(j) - half_width + step * idx[static_cast<std::size_t>(j)];
      }
      const double v = f(b);
      if (v > best_val) {
        best_val = v;
        best = b;
      }
      Eigen::Index j = 0;
      while (j < dim && ++idx[static_cast<std::size_t>(j)] == kPoints) idx[static_cast<std::size_t>(j++)] = 0;
      if (j == dim) break;
    }
    centre = best;
    half_width /= 4.0;
  }
  return centre;
}

inline Eigen::VectorXd logistic_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return grid_maximize([&](const Eigen::VectorXd& b) { return log_likelihood(X, y, b); }, X.cols(),
                       8.0, 1e-7);
}

inline double kish_deff(const std::vector<double>& w) {
  double s = 0.0, s2 = 0.0;
  for (double v : w) {
    s += v;
    s2 += v * v;
  }
  return static_cast<double>(w.size()) * s2 / (s * s);
}

// Deff of the mixed weights kappa * a (S1) and (1 - kappa) * b (S2).
inline double mixed_deff(const std::vector<double>& a, const std::vector<double>& b, double kappa) {
  std::vector<double> w;
  for (double v : a) w.push_back(kappa * v);
  for (double v : b) w.push_back((1.0 - kappa) * v);
  return kish_deff(w);
}

// Minimizer of mixed_deff on the grid {0, step, 2 step, ..., 1}.
inline double kappa_grid_argmin(const std::vector<double>& a, const std::vector<double>& b,
                                double step) {
  double best = 0.0, best_val = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::lround(1.0 / step));
  for (int k = 0; k <= n; ++k) {
    const double kappa = k * step;
    const double v = mixed_deff(a, b, kappa);
    if (v < best_val) {
      best_val = v;
      best = kappa;
    }
  }
  return best;
}

// Exact expectation of the Hajek mean sum_{S} y/d / sum_{S} 1/d under
// independent Bernoulli(d_i) selection, conditional on a nonempty sample,
// by enumerating all 2^N samples.
struct Enumeration {
  double expected_hajek = 0.0;
  double expected_ht_total = 0.0;
  double p_nonempty = 0.0;
};

inline Enumeration enumerate_bernoulli(const std::vector<double>& y, const std::vector<double>& d) {
  const std::size_t N = y.size();
  Enumeration e;
  for (unsigned mask = 0; mask < (1u << N); ++mask) {
    long double p = 1.0L, num = 0.0L, den = 0.0L;
    for (std::size_t i = 0; i < N; ++i) {
      if (mask & (1u << i)) {
        p *= d[i];
        num += y[i] / d[i];
        den += 1.0L / d[i];
      } else {
        p *= 1.0L - d[i];
      }
    }
    e.expected_ht_total += static_cast<double>(p * num);
    if (mask != 0) {
      e.expected_hajek += static_cast<double>(p * num / den);
      e.p_nonempty += static_cast<double>(p);
    }
  }
  return e;
}

// Solves A x = b by Gaussian elimination with partial pivoting in long
// double.
inline Eigen::VectorXd gauss_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index n = A.rows();
  std::vector<std::vector<long double>> m(static_cast<std::size_t>(n),
                                          std::vector<long double>(static_cast<std::size_t>(n + 1)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m[i][j] = A(i, j);
    m[i][n] = b(i);
  }
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < n; ++r) {
      if (std::fabs(m[r][c]) > std::fabs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const long double f = m[r][c] / m[c][c];
      for (Eigen::Index j = c; j <= n; ++j) m[r][j] -= f * m[c][j];
    }
  }
  std::vector<long double> x(static_cast<std::size_t>(n));
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    long double s = m[i][n];
    for (Eigen::Index j = i + 1; j < n; ++j) s -= m[i][j] * x[j];
    x[i] = s / m[i][i];
  }
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = static_cast<double>(x[i]);
  return out;
}

// Linear calibration without bounds: v = omega (1 + X xi) with
// (X' diag(omega) X) xi = t - X' omega.
inline Eigen::VectorXd linear_calibration(const Eigen::VectorXd& omega, const Eigen::MatrixXd& X,
                                          const Eigen::VectorXd& t, Eigen::VectorXd* xi_out = nullptr) {
  const Eigen::MatrixXd A = X.transpose() * omega.asDiagonal() * X;
  const Eigen::VectorXd rhs = t - X.transpose() * omega;
  const Eigen::VectorXd xi = gauss_solve(A, rhs);
  if (xi_out) *xi_out = xi;
  return omega.cwiseProduct((Eigen::VectorXd::Ones(X.rows()) + X * xi));
}

}  // namespace oracle
