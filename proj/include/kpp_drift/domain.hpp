#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kpp {

// Invalid user input or violated precondition (CLI exit code 1).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A solver failed to deliver a trustworthy answer (CLI exit code 2).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, std::string diagnostics = {})
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

using Vec2 = Eigen::Vector2d;
using SparseMat = Eigen::SparseMatrix<double>;

inline constexpr double kPi = std::numbers::pi;

enum class CellKind { Torus, Strip };

inline const char* to_string(CellKind k) { return k == CellKind::Torus ? "torus" : "strip"; }

// Node (i, j) sits at (i*h1, j*h2).  The torus stores n1 x n2 nodes; the strip
// keeps both boundary rows, so it stores n1 x (n2 + 1) nodes.  Storage is
// x-fastest: p = j*n1 + i.
class PeriodicCell {
 public:
  PeriodicCell(CellKind kind, double L1, double L2, int n1, int n2)
      : kind_(kind), L1_(L1), L2_(L2), n1_(n1), n2_(n2) {
    if (!(L1 > 0.0) || !(L2 > 0.0) || !std::isfinite(L1) || !std::isfinite(L2))
      throw InputError("cell periods L1, L2 must be positive and finite");
    if (n1 < 8 || n2 < 8) throw InputError("grid node counts n1, n2 must be >= 8");
  }

  CellKind kind() const { return kind_; }
  bool is_strip() const { return kind_ == CellKind::Strip; }
  double L1() const { return L1_; }
  double L2() const { return L2_; }
  int n1() const { return n1_; }
  int n2() const { return n2_; }
  int d() const { return is_strip() ? 1 : 2; }
  double h1() const { return L1_ / n1_; }
  double h2() const { return L2_ / n2_; }
  int nx() const { return n1_; }
  int ny() const { return is_strip() ? n2_ + 1 : n2_; }
  int size() const { return nx() * ny(); }
  int index(int i, int j) const { return j * n1_ + i; }
  double x(int i) const { return i * h1(); }
  double y(int j) const { return j * h2(); }
  double area() const { return L1_ * L2_; }

  // trapezoid in y on the strip, rectangle rule on the torus
  double row_weight(int j) const {
    const double w = h1() * h2();
    return is_strip() && (j == 0 || j == n2_) ? 0.5 * w : w;
  }

  Eigen::VectorXd weights() const {
    Eigen::VectorXd w(size());
    for (int j = 0; j < ny(); ++j) w.segment(j * n1_, n1_).setConstant(row_weight(j));
    return w;
  }

  bool operator==(const PeriodicCell& o) const {
    return kind_ == o.kind_ && L1_ == o.L1_ && L2_ == o.L2_ && n1_ == o.n1_ && n2_ == o.n2_;
  }

 private:
  CellKind kind_;
  double L1_, L2_;
  int n1_, n2_;
};

inline void require_same_cell(const PeriodicCell& a, const PeriodicCell& b, const char* what) {
  if (!(a == b)) throw InputError(std::string("grid mismatch: ") + what);
}

inline void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw InputError(std::string(what) + " contains non-finite entries");
}

class ScalarField {
 public:
  ScalarField(PeriodicCell cell, Eigen::VectorXd values) : cell_(cell), values_(std::move(values)) {
    if (values_.size() != cell_.size()) throw InputError("scalar field size does not match the grid");
    require_finite(values_, "scalar field");
  }
  static ScalarField constant(const PeriodicCell& cell, double c) {
    return {cell, Eigen::VectorXd::Constant(cell.size(), c)};
  }
  const PeriodicCell& cell() const { return cell_; }
  const Eigen::VectorXd& values() const { return values_; }
  double operator()(int i, int j) const { return values_[cell_.index(i, j)]; }

 private:
  PeriodicCell cell_;
  Eigen::VectorXd values_;
};

class VectorField {
 public:
  VectorField(PeriodicCell cell, Eigen::VectorXd u, Eigen::VectorXd v)
      : cell_(cell), u_(std::move(u)), v_(std::move(v)) {
    if (u_.size() != cell_.size() || v_.size() != cell_.size())
      throw InputError("vector field size does not match the grid");
    require_finite(u_, "vector field");
    require_finite(v_, "vector field");
  }
  static VectorField zero(const PeriodicCell& cell) {
    return {cell, Eigen::VectorXd::Zero(cell.size()), Eigen::VectorXd::Zero(cell.size())};
  }
  const PeriodicCell& cell() const { return cell_; }
  const Eigen::VectorXd& u() const { return u_; }
  const Eigen::VectorXd& v() const { return v_; }
  Vec2 at(int p) const { return {u_[p], v_[p]}; }
  double max_norm() const {
    return u_.size() ? (u_.array().square() + v_.array().square()).sqrt().maxCoeff() : 0.0;
  }
  VectorField scaled(double c) const { return {cell_, c * u_, c * v_}; }
  Eigen::VectorXd dot(const Vec2& e) const { return e.x() * u_ + e.y() * v_; }

 private:
  PeriodicCell cell_;
  Eigen::VectorXd u_, v_;
};

// Symmetric 2x2 tensor per node.
class TensorField {
 public:
  TensorField(PeriodicCell cell, Eigen::VectorXd a11, Eigen::VectorXd a12, Eigen::VectorXd a22)
      : cell_(cell), a11_(std::move(a11)), a12_(std::move(a12)), a22_(std::move(a22)) {
    const auto n = cell_.size();
    if (a11_.size() != n || a12_.size() != n || a22_.size() != n)
      throw InputError("tensor field size does not match the grid");
    require_finite(a11_, "tensor field");
    require_finite(a12_, "tensor field");
    require_finite(a22_, "tensor field");
    alpha1_ = std::numeric_limits<double>::infinity();
    alpha2_ = 0.0;
    for (int p = 0; p < n; ++p) {
      const double m = 0.5 * (a11_[p] + a22_[p]);
      const double r = std::hypot(0.5 * (a11_[p] - a22_[p]), a12_[p]);
      if (m - r <= 0.0) throw InputError("diffusion tensor is not positive definite at some node");
      alpha1_ = std::min(alpha1_, m - r);
      alpha2_ = std::max(alpha2_, m + r);
    }
  }
  static TensorField constant(const PeriodicCell& cell, double a11, double a12, double a22) {
    const auto n = cell.size();
    return {cell, Eigen::VectorXd::Constant(n, a11), Eigen::VectorXd::Constant(n, a12),
            Eigen::VectorXd::Constant(n, a22)};
  }
  static TensorField identity(const PeriodicCell& cell) { return constant(cell, 1.0, 0.0, 1.0); }

  const PeriodicCell& cell() const { return cell_; }
  const Eigen::VectorXd& a11() const { return a11_; }
  const Eigen::VectorXd& a12() const { return a12_; }
  const Eigen::VectorXd& a22() const { return a22_; }
  double alpha1() const { return alpha1_; }
  double alpha2() const { return alpha2_; }

  // (A e) at every node
  std::pair<Eigen::VectorXd, Eigen::VectorXd> times(const Vec2& e) const {
    return {e.x() * a11_ + e.y() * a12_, e.x() * a12_ + e.y() * a22_};
  }

 private:
  PeriodicCell cell_;
  Eigen::VectorXd a11_, a12_, a22_;
  double alpha1_ = 0.0, alpha2_ = 0.0;
};

// Growth rate zeta = f'_u(.,0) plus the KPP threshold rho, kept as metadata.
class ReactionSpec {
 public:
  ReactionSpec(ScalarField zeta, double rho = 0.5) : zeta_(std::move(zeta)), rho_(rho) {
    if (!(zeta_.values().minCoeff() > 0.0)) throw InputError("zeta must be positive everywhere");
    if (!(rho > 0.0 && rho < 1.0)) throw InputError("rho must lie in (0, 1)");
  }
  const ScalarField& zeta() const { return zeta_; }
  double rho() const { return rho_; }

 private:
  ScalarField zeta_;
  double rho_;
};

class Direction {
 public:
  Direction(double e1, double e2) : e_(e1, e2) {
    if (!std::isfinite(e1) || !std::isfinite(e2) || std::abs(e_.norm() - 1.0) > 1e-12)
      throw InputError("direction must be a unit vector (|e| = 1 within 1e-12)");
  }
  static Direction normalized(double e1, double e2) {
    const double n = std::hypot(e1, e2);
    if (!(n > 0.0)) throw InputError("direction must be nonzero");
    return {e1 / n, e2 / n};
  }
  const Vec2& vec() const { return e_; }
  double x() const { return e_.x(); }
  double y() const { return e_.y(); }
  Direction reversed() const { return {-e_.x(), -e_.y()}; }

  // e-tilde for the cell: on the strip only +-e1 is meaningful
  Vec2 lifted(const PeriodicCell& cell) const {
    if (cell.is_strip() && e_.y() != 0.0)
      throw InputError("strip directions must be +-e1 (second component 0)");
    return e_;
  }

 private:
  Vec2 e_;
};

// ---------------------------------------------------------------------------
// Finite differences

namespace detail {

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

// shortest decimal that round-trips, locale independent
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

// Centered first derivatives with periodic wrap; second-order one-sided
// stencils on strip boundary rows.
struct DiffOps {
  SparseMat Dx, Dy;

  explicit DiffOps(const PeriodicCell& cell) {
    const int n1 = cell.nx(), ny = cell.ny(), N = cell.size();
    const double hx = cell.h1(), hy = cell.h2();
    std::vector<Eigen::Triplet<double>> tx, ty;
    tx.reserve(2 * N);
    ty.reserve(3 * N);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < n1; ++i) {
        const int p = cell.index(i, j);
        tx.emplace_back(p, cell.index(detail::wrap(i + 1, n1), j), 0.5 / hx);
        tx.emplace_back(p, cell.index(detail::wrap(i - 1, n1), j), -0.5 / hx);
        if (!cell.is_strip()) {
          ty.emplace_back(p, cell.index(i, detail::wrap(j + 1, ny)), 0.5 / hy);
          ty.emplace_back(p, cell.index(i, detail::wrap(j - 1, ny)), -0.5 / hy);
        } else if (j == 0) {
          ty.emplace_back(p, cell.index(i, 0), -1.5 / hy);
          ty.emplace_back(p, cell.index(i, 1), 2.0 / hy);
          ty.emplace_back(p, cell.index(i, 2), -0.5 / hy);
        } else if (j == ny - 1) {
          ty.emplace_back(p, cell.index(i, j), 1.5 / hy);
          ty.emplace_back(p, cell.index(i, j - 1), -2.0 / hy);
          ty.emplace_back(p, cell.index(i, j - 2), 0.5 / hy);
        } else {
          ty.emplace_back(p, cell.index(i, j + 1), 0.5 / hy);
          ty.emplace_back(p, cell.index(i, j - 1), -0.5 / hy);
        }
      }
    }
    Dx.resize(N, N);
    Dy.resize(N, N);
    Dx.setFromTriplets(tx.begin(), tx.end());
    Dy.setFromTriplets(ty.begin(), ty.end());
  }
};

// Discrete perpendicular gradient (D_y phi, -D_x phi).
inline VectorField perp_gradient(const ScalarField& phi) {
  const DiffOps ops(phi.cell());
  return {phi.cell(), ops.Dy * phi.values(), -(ops.Dx * phi.values())};
}

inline Eigen::VectorXd divergence(const VectorField& q) {
  const DiffOps ops(q.cell());
  return ops.Dx * q.u() + ops.Dy * q.v();
}

// ---------------------------------------------------------------------------
// Quadrature and admissibility

inline double cell_integral(const ScalarField& f) { return f.cell().weights().dot(f.values()); }

inline double cell_integral(const PeriodicCell& cell, const Eigen::VectorXd& f) {
  if (f.size() != cell.size()) throw InputError("grid mismatch in cell_integral");
  return cell.weights().dot(f);
}

struct AdmissibilityReport {
  double max_divergence = 0.0;
  double mean_q1 = 0.0;  // |int_C q1| / |C|
  double mean_q2 = 0.0;
  double max_boundary_normal = 0.0;  // strip only
  double q_inf = 0.0;
  double tol = 0.0;
  bool passed = false;
  std::vector<std::string> violations;
};

inline AdmissibilityReport check_admissibility(const VectorField& q, const PeriodicCell& cell,
                                               double tol = 1e-8) {
  require_same_cell(q.cell(), cell, "flow sampled on a different cell");
  if (!(tol > 0.0)) throw InputError("admissibility tolerance must be positive");
  AdmissibilityReport r;
  r.tol = tol;
  r.q_inf = q.max_norm();
  r.max_divergence = divergence(q).cwiseAbs().maxCoeff();
  r.mean_q1 = std::abs(cell_integral(cell, q.u())) / cell.area();
  r.mean_q2 = std::abs(cell_integral(cell, q.v())) / cell.area();
  if (cell.is_strip()) {
    for (int i = 0; i < cell.nx(); ++i)
      r.max_boundary_normal = std::max({r.max_boundary_normal, std::abs(q.v()[cell.index(i, 0)]),
                                        std::abs(q.v()[cell.index(i, cell.n2())])});
  }
  const double bound = r.q_inf > 0.0 ? tol * r.q_inf : tol;
  if (r.max_divergence > bound) r.violations.push_back("divergence-free condition violated");
  if (r.mean_q1 > bound) r.violations.push_back("mean-zero condition violated for q1");
  if (r.mean_q2 > bound) r.violations.push_back("mean-zero condition violated for q2");
  if (r.max_boundary_normal > bound)
    r.violations.push_back("no-penetration condition q.nu = 0 violated on the strip boundary");
  r.passed = r.violations.empty();
  return r;
}

// ---------------------------------------------------------------------------
// Flow catalog

struct FourierTerm {
  int kx = 0, ky = 0;
  double cos_coeff = 0.0, sin_coeff = 0.0;
};

struct FlowSpec {
  std::string name = "zero";
  double amplitude = 1.0;
  int mode = 1;
  int mode_x = 1, mode_y = 1;
  std::vector<FourierTerm> coefficients;  // fourier
  double q1 = 0.0, q2 = 0.0;              // constant (test input, not admissible unless zero)
};

inline const std::vector<std::string>& flow_catalog() {
  static const std::vector<std::string> names{"zero",   "shear",   "cellular", "diagonal",
                                              "remark", "fourier", "constant"};
  return names;
}

namespace detail {

// exp(-1/sin^2(pi Y)) sin(2 pi (X + ln frac(Y))) in unit-lattice coordinates
inline double remark_stream(double X, double Y) {
  const double fy = Y - std::floor(Y);
  const double s = std::sin(kPi * fy);
  const double s2 = s * s;
  if (s2 < 1e-300 || fy <= 0.0) return 0.0;
  return std::exp(-1.0 / s2) * std::sin(2.0 * kPi * (X + std::log(fy)));
}

inline void validate_flow(const FlowSpec& f) {
  const auto& names = flow_catalog();
  if (std::find(names.begin(), names.end(), f.name) == names.end())
    throw InputError("unknown flow catalog name '" + f.name + "'");
  if (!std::isfinite(f.amplitude)) throw InputError("flow amplitude must be finite");
  if ((f.name == "shear" || f.name == "diagonal") && f.mode < 1)
    throw InputError("flow mode must be >= 1");
  if (f.name == "cellular" && (f.mode_x < 1 || f.mode_y < 1))
    throw InputError("cellular modes must be >= 1");
  for (const auto& t : f.coefficients)
    if (!std::isfinite(t.cos_coeff) || !std::isfinite(t.sin_coeff))
      throw InputError("fourier coefficients must be finite");
}

}  // namespace detail

// Stream function of a catalog flow, when it has one.
inline std::optional<ScalarField> sample_stream_function(const FlowSpec& spec, const PeriodicCell& cell) {
  detail::validate_flow(spec);
  if (spec.name == "constant") return std::nullopt;
  const double L1 = cell.L1(), L2 = cell.L2(), A = spec.amplitude;
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(cell.size());
  for (int j = 0; j < cell.ny(); ++j) {
    const double y = cell.y(j);
    for (int i = 0; i < cell.nx(); ++i) {
      const double x = cell.x(i);
      double v = 0.0;
      if (spec.name == "shear") {
        const double k = 2.0 * kPi * spec.mode / L2;
        v = -A * std::cos(k * y) / k;
      } else if (spec.name == "cellular") {
        v = A * std::sin(2.0 * kPi * spec.mode_x * x / L1) * std::sin(2.0 * kPi * spec.mode_y * y / L2);
      } else if (spec.name == "diagonal") {
        v = A * std::sin(2.0 * kPi * spec.mode * (x / L1 - y / L2));
      } else if (spec.name == "remark") {
        v = A * detail::remark_stream(x / L1, y / L2);
      } else if (spec.name == "fourier") {
        for (const auto& t : spec.coefficients) {
          const double arg = 2.0 * kPi * (t.kx * x / L1 + t.ky * y / L2);
          v += t.cos_coeff * std::cos(arg) + t.sin_coeff * std::sin(arg);
        }
      }
      phi[cell.index(i, j)] = v;
    }
  }
  return ScalarField(cell, std::move(phi));
}

// Grid samples of a catalog flow.  Shear and constant flows are sampled
// pointwise; every other entry is the discrete perpendicular gradient of its
// sampled stream function, which keeps it exactly divergence-free and mean-zero
// on the grid.
inline VectorField sample_flow(const FlowSpec& spec, const PeriodicCell& cell) {
  detail::validate_flow(spec);
  const int N = cell.size();
  if (spec.name == "zero") return VectorField::zero(cell);
  if (spec.name == "constant")
    return {cell, Eigen::VectorXd::Constant(N, spec.q1), Eigen::VectorXd::Constant(N, spec.q2)};
  if (spec.name == "shear") {
    Eigen::VectorXd u(N);
    for (int j = 0; j < cell.ny(); ++j)
      u.segment(j * cell.nx(), cell.nx())
          .setConstant(spec.amplitude * std::sin(2.0 * kPi * spec.mode * cell.y(j) / cell.L2()));
    return {cell, std::move(u), Eigen::VectorXd::Zero(N)};
  }
  return perp_gradient(*sample_stream_function(spec, cell));
}

// Catalog scalar/tensor inputs: a constant, optionally modulated by
// (1 + eps sin(2 pi x/L1) sin(2 pi y/L2)).
inline Eigen::VectorXd modulation(const PeriodicCell& cell, double eps) {
  Eigen::VectorXd m(cell.size());
  for (int j = 0; j < cell.ny(); ++j)
    for (int i = 0; i < cell.nx(); ++i)
      m[cell.index(i, j)] = 1.0 + eps * std::sin(2.0 * kPi * cell.x(i) / cell.L1()) *
                                      std::sin(2.0 * kPi * cell.y(j) / cell.L2());
  return m;
}

inline ScalarField make_zeta(const PeriodicCell& cell, double value, double eps = 0.0) {
  if (!(std::abs(eps) < 1.0)) throw InputError("zeta modulation must satisfy |eps| < 1");
  ScalarField z(cell, value * modulation(cell, eps));
  if (!(z.values().minCoeff() > 0.0)) throw InputError("zeta must be positive everywhere");
  return z;
}

inline TensorField make_diffusion(const PeriodicCell& cell, double a11, double a12, double a22,
                                  double eps = 0.0) {
  if (!(std::abs(eps) < 1.0)) throw InputError("diffusion modulation must satisfy |eps| < 1");
  const Eigen::VectorXd m = modulation(cell, eps);
  return {cell, a11 * m, a12 * m, a22 * m};
}

}  // namespace kpp
