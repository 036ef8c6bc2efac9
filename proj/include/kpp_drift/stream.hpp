#pragma once

#include "domain.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace kpp {

struct StreamFunction {
  ScalarField phi;
  double gauge = 0.0;     // constant subtracted so that phi(node 0) = 0
  double residual = 0.0;  // max |q - perp_gradient(phi)|
};

struct HodgeReport {
  double relative_residual = 0.0;     // ||q - grad^perp phi||_inf / ||q||_inf
  double boundary_oscillation = 0.0;  // strip: max over the two rows of (max - min)
  bool passed = false;
};

namespace detail {

using cvec = std::vector<std::complex<double>>;

// Transform every row (fixed j) of an nx-by-ny field in place.
inline void fft_rows(std::vector<cvec>& rows, bool inverse) {
  Eigen::FFT<double> fft;
  cvec out;
  for (auto& r : rows) {
    if (inverse) fft.inv(out, r);
    else fft.fwd(out, r);
    r.swap(out);
  }
}

// Transform along j for every fixed i.
inline void fft_columns(std::vector<cvec>& rows, bool inverse) {
  const std::size_t ny = rows.size(), nx = rows.front().size();
  Eigen::FFT<double> fft;
  cvec col(ny), out;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) col[j] = rows[j][i];
    if (inverse) fft.inv(out, col);
    else fft.fwd(out, col);
    for (std::size_t j = 0; j < ny; ++j) rows[j][i] = out[j];
  }
}

inline std::vector<cvec> to_rows(const PeriodicCell& cell, const Eigen::VectorXd& f) {
  std::vector<cvec> rows(cell.ny(), cvec(cell.nx()));
  for (int j = 0; j < cell.ny(); ++j)
    for (int i = 0; i < cell.nx(); ++i) rows[j][i] = f[cell.index(i, j)];
  return rows;
}

inline Eigen::VectorXd from_rows(const PeriodicCell& cell, const std::vector<cvec>& rows) {
  Eigen::VectorXd f(cell.size());
  for (int j = 0; j < cell.ny(); ++j)
    for (int i = 0; i < cell.nx(); ++i) f[cell.index(i, j)] = rows[j][i].real();
  return f;
}

// eigenvalue of the periodic second difference for mode m
inline double second_difference_symbol(int m, int n, double h) {
  const double s = std::sin(kPi * m / n);
  return -4.0 * s * s / (h * h);
}

// wavenumber of FFT bin m for spectral differentiation; Nyquist bin dropped
inline double spectral_wavenumber(int m, int n, double L) {
  if (2 * m == n) return 0.0;
  const int k = 2 * m < n ? m : m - n;
  return 2.0 * kPi * k / L;
}

// Spectral derivative along x (always periodic).
inline Eigen::VectorXd spectral_dx(const PeriodicCell& cell, const Eigen::VectorXd& f) {
  auto rows = to_rows(cell, f);
  fft_rows(rows, false);
  for (auto& r : rows)
    for (int m = 0; m < cell.nx(); ++m)
      r[m] *= std::complex<double>(0.0, spectral_wavenumber(m, cell.nx(), cell.L1()));
  fft_rows(rows, true);
  return from_rows(cell, rows);
}

// Spectral derivative along y (torus only).
inline Eigen::VectorXd spectral_dy(const PeriodicCell& cell, const Eigen::VectorXd& f) {
  auto rows = to_rows(cell, f);
  fft_columns(rows, false);
  for (int j = 0; j < cell.ny(); ++j) {
    const double k = spectral_wavenumber(j, cell.ny(), cell.L2());
    for (auto& c : rows[j]) c *= std::complex<double>(0.0, k);
  }
  fft_columns(rows, true);
  return from_rows(cell, rows);
}

}  // namespace detail

inline VectorField velocity_from_stream(const ScalarField& phi) { return perp_gradient(phi); }

// Solves Delta_h phi = D_y q1 - D_x q2 with the five-point Laplacian: full
// Fourier diagonalization on the torus; Fourier in x plus one Dirichlet
// tridiagonal solve per x-mode on the strip (phi = 0 on both boundary rows,
// which is the right constant for admissible strip flows).
inline StreamFunction stream_from_velocity(const VectorField& q, double admissibility_tol = 1e-8) {
  const PeriodicCell& cell = q.cell();
  const auto adm = check_admissibility(q, cell, admissibility_tol);
  if (!adm.passed) throw InputError("stream_from_velocity: flow is not admissible (" + adm.violations.front() + ")");

  const DiffOps ops(cell);
  const Eigen::VectorXd source = ops.Dy * q.u() - ops.Dx * q.v();
  const int nx = cell.nx(), ny = cell.ny();
  auto rows = detail::to_rows(cell, source);
  detail::fft_rows(rows, false);

  if (!cell.is_strip()) {
    detail::fft_columns(rows, false);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double lam = detail::second_difference_symbol(i, nx, cell.h1()) +
                           detail::second_difference_symbol(j, ny, cell.h2());
        rows[j][i] = (i == 0 && j == 0) ? 0.0 : rows[j][i] / lam;
      }
    detail::fft_columns(rows, true);
  } else {
    const int n2 = cell.n2();
    const double iy2 = 1.0 / (cell.h2() * cell.h2());
    std::vector<double> c(n2);
    std::vector<std::complex<double>> d(n2);
    for (int i = 0; i < nx; ++i) {
      const double lx = detail::second_difference_symbol(i, nx, cell.h1());
      // unknowns j = 1..n2-1; sub/super diagonal iy2, diagonal lx - 2 iy2
      const double diag = lx - 2.0 * iy2;
      c[1] = iy2 / diag;
      d[1] = rows[1][i] / diag;
      for (int j = 2; j < n2; ++j) {
        const double m = diag - iy2 * c[j - 1];
        c[j] = iy2 / m;
        d[j] = (rows[j][i] - iy2 * d[j - 1]) / m;
      }
      rows[n2 - 1][i] = d[n2 - 1];
      for (int j = n2 - 2; j >= 1; --j) rows[j][i] = d[j] - c[j] * rows[j + 1][i];
      rows[0][i] = 0.0;
      rows[n2][i] = 0.0;
    }
  }
  detail::fft_rows(rows, true);
  Eigen::VectorXd phi = detail::from_rows(cell, rows);
  const double gauge = phi[0];
  phi.array() -= gauge;

  StreamFunction sf{ScalarField(cell, std::move(phi)), gauge, 0.0};
  const VectorField back = velocity_from_stream(sf.phi);
  sf.residual = std::max((back.u() - q.u()).cwiseAbs().maxCoeff(), (back.v() - q.v()).cwiseAbs().maxCoeff());
  if (!std::isfinite(sf.residual))
    throw NumericalError("stream_from_velocity: Poisson solve produced non-finite values");
  return sf;
}

// Compares q with grad^perp phi using spectral derivatives in the periodic
// directions (second-order differences across the strip).
inline HodgeReport verify_hodge(const VectorField& q, const StreamFunction& sf, double tol) {
  const PeriodicCell& cell = q.cell();
  require_same_cell(cell, sf.phi.cell(), "verify_hodge");
  const Eigen::VectorXd& phi = sf.phi.values();
  const Eigen::VectorXd dx = detail::spectral_dx(cell, phi);
  const Eigen::VectorXd dy = cell.is_strip() ? Eigen::VectorXd(DiffOps(cell).Dy * phi) : detail::spectral_dy(cell, phi);
  const double err = std::max((q.u() - dy).cwiseAbs().maxCoeff(), (q.v() + dx).cwiseAbs().maxCoeff());
  const double qn = q.max_norm();

  HodgeReport r;
  r.relative_residual = qn > 0.0 ? err / qn : err;
  if (cell.is_strip()) {
    for (int j : {0, cell.n2()}) {
      const auto row = phi.segment(j * cell.nx(), cell.nx());
      r.boundary_oscillation = std::max(r.boundary_oscillation, row.maxCoeff() - row.minCoeff());
    }
  }
  r.passed = r.relative_residual <= tol && r.boundary_oscillation <= tol;
  return r;
}

}  // namespace kpp
