#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's solvers.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline constexpr double pi = std::numbers::pi;

struct ShearLimit {
  double value = 0.0;
  double mu = 0.0;
  int feasible_scan_points = 0;
};

// Large-drift limit for the shear q = (amp sin(2 pi y / L2), 0) with A = I,
// constant zeta, e = e1, restricted to first integrals w(y): maximize
// int q1 w^2 / int w^2 subject to int zeta w^2 >= int w'^2.  The y-grid is
// periodic with n points and w' uses forward differences.  The multiplier
// mu is scanned on a geometric grid and the first feasible interval refined
// by bisection; the answer is the best feasible quotient seen.
inline ShearLimit shear_limit_1d(double amp, double zeta, int n = 512, double L2 = 1.0) {
  const double h = L2 / n, c = 1.0 / (h * h);
  Eigen::VectorXd q(n);
  for (int j = 0; j < n; ++j) q[j] = amp * std::sin(2.0 * pi * j * h / L2);

  // H w = zeta w - S w, S the periodic second-difference energy
  auto apply_H = [&](const Eigen::VectorXd& w) {
    Eigen::VectorXd r(n);
    for (int j = 0; j < n; ++j) r[j] = zeta * w[j] - c * (2.0 * w[j] - w[(j + 1) % n] - w[(j + n - 1) % n]);
    return r;
  };

  // B = diag(q) + mu H has positive off-diagonals, so its top eigenvalue is the
  // largest theta at which theta I - B stops being positive definite; find it
  // by bisection on LDL^T pivots, then take the eigenvector by inverse iteration.
  struct Top {
    double quotient, g;
  };
  auto top = [&](double mu) {
    std::vector<Eigen::Triplet<double>> t;
    for (int j = 0; j < n; ++j) {
      t.emplace_back(j, j, q[j] + mu * (zeta - 2.0 * c));
      t.emplace_back(j, (j + 1) % n, mu * c);
      t.emplace_back((j + 1) % n, j, mu * c);
    }
    Eigen::SparseMatrix<double> B(n, n), I(n, n);
    B.setFromTriplets(t.begin(), t.end());
    I.setIdentity();
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.analyzePattern(B);
    auto positive = [&](double theta) {
      ldlt.factorize(theta * I - B);
      return ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0;
    };
    double lo = q.minCoeff() + mu * (zeta - 4.0 * c) - 1.0, hi = q.maxCoeff() + mu * zeta + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (positive(mid) ? hi : lo) = mid;
    }
    positive(hi + 1e-12 * std::max(1.0, std::abs(hi)));
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    for (int it = 0; it < 4; ++it) {
      v = ldlt.solve(v);
      v /= v.norm();
    }
    return Top{v.dot(q.cwiseProduct(v)), v.dot(apply_H(v))};
  };

  ShearLimit out;
  Top t0 = top(0.0);
  if (t0.g >= 0.0) return {t0.quotient, 0.0, 1};
  double prev = 0.0, best = -1.0;
  for (int i = 0; i <= 80; ++i) {
    const double mu = 1e-4 * std::pow(10.0, i * 0.1);
    const Top t = top(mu);
    if (t.g >= 0.0) {
      ++out.feasible_scan_points;
      best = std::max(best, t.quotient);
      if (out.feasible_scan_points == 1) {
        double lo = prev, hi = mu;
        for (int b = 0; b < 60; ++b) {
          const double mid = 0.5 * (lo + hi);
          const Top tm = top(mid);
          if (tm.g >= 0.0) {
            hi = mid;
            best = std::max(best, tm.quotient);
          } else {
            lo = mid;
          }
        }
        out.mu = hi;
      }
      if (out.feasible_scan_points >= 3) break;  // g increases with mu, the quotient decreases
    }
    prev = mu;
  }
  out.value = best;
  return out;
}

// q = grad^perp(sin 2 pi x sin 2 pi y) on the unit torus, analytically
inline double cellular_u(double x, double y) { return 2.0 * pi * std::sin(2.0 * pi * x) * std::cos(2.0 * pi * y); }
inline double cellular_v(double x, double y) { return -2.0 * pi * std::cos(2.0 * pi * x) * std::sin(2.0 * pi * y); }

// stream function of (sin 2 pi y, 0) on the unit torus with phi(0, 0) = 0
inline double shear_phi(double y) { return (1.0 - std::cos(2.0 * pi * y)) / (2.0 * pi); }

}  // namespace oracle
