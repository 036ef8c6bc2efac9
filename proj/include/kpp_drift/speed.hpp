#pragma once

#include "domain.hpp"
#include "firstintegrals.hpp"
#include "parallel.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kpp {

struct EigenCurvePoint {
  double lambda = 0.0;
  double k = 0.0;
  double ratio = 0.0;
  double eigenvector_positivity = 0.0;  // min of the eigenfunction scaled to max 1
  bool upwind = false;                  // first-order upwind fallback was needed
  int iterations = 0;
  double residual = 0.0;                // ||L psi - k psi||_inf / ||psi||_inf
};

struct EigenSolveOptions {
  double tol = 1e-10;  // residual relative to max(1, |k|)
  int max_iter = 5000;
  int max_refactor = 12;
};

// L_lambda psi = div(A grad psi) + (M q + 2 lambda A e).grad psi
//               + [lambda div(A e) + lambda^2 e.A e + lambda M q.e + zeta] psi
// The drift enters in skew form 1/2 (b.D psi + D.(b psi)) with b = M q + 2
// lambda A e, which equals the line above for divergence-free q; on the torus
// it is skew in the quadrature inner product, so q -> -q, e -> -e gives the
// adjoint operator and the same principal eigenvalue.
class KppOperator {
 public:
  KppOperator(const TensorField& A, const VectorField& q, double M, const ScalarField& zeta, const Direction& e)
      : cell_(q.cell()), ops_(q.cell()) {
    require_same_cell(cell_, A.cell(), "principal_eigenvalue: diffusion");
    require_same_cell(cell_, zeta.cell(), "principal_eigenvalue: zeta");
    if (!(M >= 0.0) || !std::isfinite(M)) throw InputError("drift amplitude M must be finite and >= 0");
    if (!(zeta.values().minCoeff() > 0.0)) throw InputError("zeta must be positive everywhere");
    const Vec2 et = e.lifted(cell_);
    if (cell_.is_strip()) {
      for (int i = 0; i < cell_.nx(); ++i)
        if (A.a12()[cell_.index(i, 0)] != 0.0 || A.a12()[cell_.index(i, cell_.n2())] != 0.0)
          throw InputError("strip cells need a12 = 0 on the boundary rows");
    }
    const Eigen::VectorXd w = cell_.weights();
    diffusion_ = -(w.cwiseInverse().asDiagonal() * stiffness_matrix(A));
    qu_ = M * q.u();
    qv_ = M * q.v();
    std::tie(cu_, cv_) = A.times(et);
    eAe_ = et.x() * cu_ + et.y() * cv_;
    qe_ = M * q.dot(et);
    zeta_ = zeta.values();
    div_c_ = ops_.Dx * cu_ + ops_.Dy * cv_;
  }

  const PeriodicCell& cell() const { return cell_; }

  Eigen::VectorXd potential(double lambda) const {
    return (lambda * lambda) * eAe_ + lambda * qe_ + zeta_;
  }

  SparseMat at(double lambda, bool upwind) const {
    const Eigen::VectorXd bu = qu_ + 2.0 * lambda * cu_, bv = qv_ + 2.0 * lambda * cv_;
    SparseMat L = diffusion_;
    if (!upwind) {
      const SparseMat adv = SparseMat(bu.asDiagonal() * ops_.Dx) + SparseMat(bv.asDiagonal() * ops_.Dy);
      const SparseMat cons = SparseMat(ops_.Dx * bu.asDiagonal()) + SparseMat(ops_.Dy * bv.asDiagonal());
      L += 0.5 * (adv + cons);
      L += SparseMat(potential(lambda).asDiagonal());
    } else {
      L += upwind_drift(bu, bv);
      L += SparseMat((potential(lambda) + lambda * div_c_).asDiagonal());
    }
    L.makeCompressed();
    return L;
  }

  // Upper bound on the real part of the spectrum of at(lambda, upwind).
  double upper_bound(double lambda, bool upwind, const SparseMat& L) const {
    if (!upwind && !cell_.is_strip()) return potential(lambda).maxCoeff();
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(L.rows()), off = Eigen::VectorXd::Zero(L.rows());
    for (int k = 0; k < L.outerSize(); ++k)
      for (SparseMat::InnerIterator it(L, k); it; ++it) {
        if (it.row() == it.col()) diag[it.row()] += it.value();
        else off[it.row()] += std::abs(it.value());
      }
    return (diag + off).maxCoeff();
  }

 private:
  SparseMat upwind_drift(const Eigen::VectorXd& bu, const Eigen::VectorXd& bv) const {
    const PeriodicCell& c = cell_;
    const int nx = c.nx(), ny = c.ny();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(4 * c.size());
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int p = c.index(i, j);
        const double b1 = bu[p], b2 = bv[p];
        const int px = c.index(detail::wrap(b1 >= 0 ? i + 1 : i - 1, nx), j);
        t.emplace_back(p, px, std::abs(b1) / c.h1());
        t.emplace_back(p, p, -std::abs(b1) / c.h1());
        int jy = b2 >= 0 ? j + 1 : j - 1;
        if (c.is_strip()) {
          if (jy < 0 || jy >= ny) continue;  // no flux through the walls
        } else {
          jy = detail::wrap(jy, ny);
        }
        t.emplace_back(p, c.index(i, jy), std::abs(b2) / c.h2());
        t.emplace_back(p, p, -std::abs(b2) / c.h2());
      }
    SparseMat U(c.size(), c.size());
    U.setFromTriplets(t.begin(), t.end());
    return U;
  }

  PeriodicCell cell_;
  DiffOps ops_;
  SparseMat diffusion_;
  Eigen::VectorXd qu_, qv_, cu_, cv_, eAe_, qe_, zeta_, div_c_;
};

namespace detail {

struct EigenSolve {
  double k = 0.0;
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Shift-invert power iteration from a shift above the rightmost eigenvalue;
// the shift is moved toward the estimate once the residual is small relative
// to the distance, which keeps the principal eigenvalue the nearest one.
inline EigenSolve shift_invert(const SparseMat& L, double bound, const Eigen::VectorXd* warm,
                               const EigenSolveOptions& opt) {
  const Eigen::Index N = L.rows();
  SparseMat I(N, N);
  I.setIdentity();
  double sigma = bound + 1e-3 * (1.0 + std::abs(bound));
  Eigen::SparseLU<SparseMat> lu;
  auto factor = [&](double s) {
    lu.compute(SparseMat(s * I - L));
    if (lu.info() != Eigen::Success) throw NumericalError("principal_eigenvalue: sparse factorization failed");
  };
  factor(sigma);
  Eigen::VectorXd x = (warm && warm->size() == N) ? *warm : Eigen::VectorXd::Ones(N);
  x /= x.cwiseAbs().maxCoeff();
  // residuals cannot drop below rounding in L x
  double norm_inf = 0.0;
  {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(N);
    for (int c = 0; c < L.outerSize(); ++c)
      for (SparseMat::InnerIterator it(L, c); it; ++it) rows[it.row()] += std::abs(it.value());
    norm_inf = rows.maxCoeff();
  }
  const double floor = 100.0 * std::numeric_limits<double>::epsilon() * norm_inf;
  EigenSolve out;
  int refactors = 0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::VectorXd y = lu.solve(x);
    if (!y.allFinite()) throw NumericalError("principal_eigenvalue: non-finite iterate");
    const Eigen::Index imax = [&] { Eigen::Index i; y.cwiseAbs().maxCoeff(&i); return i; }();
    y /= y[imax];
    x.swap(y);
    const Eigen::VectorXd Lx = L * x;
    const double k = x.dot(Lx) / x.squaredNorm();
    const double res = (Lx - k * x).cwiseAbs().maxCoeff();
    out = {k, x, it, res, false};
    if (res <= std::max(opt.tol * std::max(1.0, std::abs(k)), floor)) {
      out.converged = true;
      break;
    }
    const double dist = sigma - k;
    if (refactors < opt.max_refactor && dist > 0.0 && res < 1e-2 * dist &&
        dist > 1e-8 * std::max(1.0, std::abs(k))) {
      sigma = k + std::max(0.05 * dist, 20.0 * res);
      factor(sigma);
      ++refactors;
    }
  }
  return out;
}

// Centered drift first; first-order upwinding when the eigenfunction is not
// positive or the iteration does not converge.
inline std::pair<EigenCurvePoint, Eigen::VectorXd> principal_pair(const KppOperator& op, double lambda,
                                                                  const EigenSolveOptions& opt,
                                                                  const Eigen::VectorXd* warm) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be positive");
  std::string diag;
  for (bool upwind : {false, true}) {
    const SparseMat L = op.at(lambda, upwind);
    auto s = shift_invert(L, op.upper_bound(lambda, upwind, L), warm, opt);
    const double pos = s.x.minCoeff() / s.x.cwiseAbs().maxCoeff();
    diag += std::string(upwind ? "upwind" : "centered") + ": k=" + std::to_string(s.k) +
            " residual=" + detail::format_double(s.residual) + " positivity=" + std::to_string(pos) +
            " iterations=" + std::to_string(s.iterations) + "\n";
    if (s.converged && pos > 0.0)
      return {EigenCurvePoint{lambda, s.k, s.k / lambda, pos, upwind, s.iterations, s.residual}, std::move(s.x)};
  }
  throw NumericalError("principal_eigenvalue: no converged positive eigenfunction at lambda=" +
                           std::to_string(lambda),
                       diag);
}

}  // namespace detail

inline EigenCurvePoint principal_eigenvalue(const KppOperator& op, double lambda, const EigenSolveOptions& opt = {}) {
  return detail::principal_pair(op, lambda, opt, nullptr).first;
}

inline EigenCurvePoint principal_eigenvalue(const TensorField& A, const VectorField& q, double M,
                                            const ScalarField& zeta, const Direction& e, double lambda,
                                            const EigenSolveOptions& opt = {}) {
  return principal_eigenvalue(KppOperator(A, q, M, zeta, e), lambda, opt);
}

// ---------------------------------------------------------------------------
// Minimal speed

struct SearchParams {
  double lambda_lo = 0.05;
  double lambda_hi = 20.0;
  double expand_factor = 4.0;
  int max_expansions = 3;
  double tol = 1e-4;  // relative width of the final lambda bracket
  int initial_samples = 9;
  EigenSolveOptions eigen;
};

struct SpeedResult {
  double c_star = 0.0;
  double lambda_star = 0.0;
  std::vector<EigenCurvePoint> curve;  // every evaluated point, sorted by lambda
  double M = 0.0;
  int n1 = 0, n2 = 0;
  bool upwind_fallback = false;
};

inline SpeedResult minimal_speed(const TensorField& A, double M, const VectorField& q, const ScalarField& zeta,
                                 const Direction& e, const SearchParams& sp = {}) {
  if (!(sp.lambda_lo > 0.0) || !(sp.lambda_hi > sp.lambda_lo)) throw InputError("invalid lambda bracket");
  if (!(sp.tol > 0.0) || sp.initial_samples < 3 || !(sp.expand_factor > 1.0))
    throw InputError("invalid search parameters");
  const KppOperator op(A, q, M, zeta, e);
  std::map<double, EigenCurvePoint> pts;
  std::map<double, Eigen::VectorXd> vecs;
  // evaluates k(lambda)/lambda, warm-started from the nearest solved lambda
  auto run = [&](double lam) {
    if (auto hit = pts.find(lam); hit != pts.end()) return hit->second.ratio;
    const Eigen::VectorXd* warm = nullptr;
    if (!vecs.empty()) {
      auto it = vecs.lower_bound(lam);
      if (it == vecs.end() || (it != vecs.begin() && lam / std::prev(it)->first < it->first / lam)) --it;
      warm = &it->second;
    }
    auto [p, x] = detail::principal_pair(op, lam, sp.eigen, warm);
    pts[lam] = p;
    vecs[lam] = std::move(x);
    return p.ratio;
  };

  double lo = sp.lambda_lo, hi = sp.lambda_hi;
  for (int i = 0; i < sp.initial_samples; ++i)
    run(lo * std::pow(hi / lo, static_cast<double>(i) / (sp.initial_samples - 1)));
  auto argmin = [&] {
    return std::min_element(pts.begin(), pts.end(),
                            [](auto& a, auto& b) { return a.second.ratio < b.second.ratio; })->first;
  };
  int expansions = 0;
  for (;;) {
    const double best = argmin();
    const bool at_lo = best == pts.begin()->first, at_hi = best == pts.rbegin()->first;
    if (!at_lo && !at_hi) break;
    if (expansions >= sp.max_expansions)
      throw NumericalError("minimal_speed: minimum of k/lambda at the bracket edge after " +
                           std::to_string(expansions) + " expansions (lambda=" + std::to_string(best) + ")");
    ++expansions;
    if (at_lo) {
      const double nlo = lo / sp.expand_factor;
      for (int i = 0; i < 3; ++i) run(nlo * std::pow(lo / nlo, i / 3.0));
      lo = nlo;
    } else {
      const double nhi = hi * sp.expand_factor;
      for (int i = 1; i <= 3; ++i) run(hi * std::pow(nhi / hi, i / 3.0));
      hi = nhi;
    }
  }

  // golden section in log(lambda) between the neighbours of the best sample
  auto it = pts.find(argmin());
  double a = std::log(std::prev(it)->first), b = std::log(std::next(it)->first);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = run(std::exp(x1)), f2 = run(std::exp(x2));
  while (b - a > sp.tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = run(std::exp(x1));
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = run(std::exp(x2));
    }
  }

  SpeedResult r;
  r.M = M;
  r.n1 = q.cell().n1();
  r.n2 = q.cell().n2();
  for (auto& [lam, p] : pts) {
    r.curve.push_back(p);
    r.upwind_fallback = r.upwind_fallback || p.upwind;
  }
  const auto& bp = pts.at(argmin());
  r.c_star = bp.ratio;
  r.lambda_star = bp.lambda;
  if (!(r.c_star > 0.0)) throw NumericalError("minimal_speed: non-positive speed");
  return r;
}

// ---------------------------------------------------------------------------
// Convergence study c*(M)/M -> limit

struct ConvergenceRow {
  double M = 0.0;
  double speed_over_M = 0.0;
  double gap = 0.0;
  double lambda_star = 0.0;
  bool ok = false;
  std::string error;
};

struct ConvergenceParams {
  SearchParams search;
  KernelParams kernel;
  double final_gap_fraction = 0.1;   // of the limit when it is positive
  double zero_limit_fraction = 0.05; // of c*(M_first)/M_first when the limit is 0
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  LimitSpeedResult limit;
  double bound = 0.0;            // max c*(M)/M over the rows
  bool bounded = false;          // every row below |q.e|_inf + 2 sqrt(alpha2 |zeta|_inf)/M
  bool gaps_nonincreasing = false;
  double final_gap_threshold = 0.0;
  bool final_gap_ok = false;
};

inline ConvergenceReport convergence_study(const TensorField& A, const VectorField& q, const ScalarField& zeta,
                                           const Direction& e, const std::vector<double>& M_list,
                                           const ConvergenceParams& cp = {}) {
  if (M_list.size() < 2) throw InputError("convergence_study needs at least two M values");
  for (std::size_t i = 0; i < M_list.size(); ++i)
    if (!(M_list[i] > 0.0) || (i > 0 && !(M_list[i] > M_list[i - 1])))
      throw InputError("M_list must be positive and increasing");

  const KernelBasis kb = kernel_basis(advection_constraint_operator(q), cp.kernel);
  ConvergenceReport rep{{}, limit_speed(A, q, zeta, e, kb), 0.0, false, false, 0.0, false};
  const double v = rep.limit.value;
  rep.rows.resize(M_list.size());
  parallel_for(M_list.size(), [&](std::size_t i) {
    ConvergenceRow& row = rep.rows[i];
    row.M = M_list[i];
    try {
      const SpeedResult s = minimal_speed(A, M_list[i], q, zeta, e, cp.search);
      row.speed_over_M = s.c_star / row.M;
      row.gap = std::abs(row.speed_over_M - v);
      row.lambda_star = s.lambda_star;
      row.ok = true;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });

  const double qe_inf = q.dot(e.lifted(q.cell())).cwiseAbs().maxCoeff();
  const double zeta_inf = zeta.values().cwiseAbs().maxCoeff();
  rep.bounded = true;
  for (const auto& row : rep.rows) {
    if (!row.ok) {
      rep.bounded = false;
      continue;
    }
    rep.bound = std::max(rep.bound, row.speed_over_M);
    const double envelope = qe_inf + 2.0 * std::sqrt(A.alpha2() * zeta_inf) / row.M;
    rep.bounded = rep.bounded && row.speed_over_M <= envelope * (1.0 + 1e-9);
  }
  const std::size_t n = rep.rows.size();
  const std::size_t first = n >= 3 ? n - 3 : 0;
  rep.gaps_nonincreasing = true;
  for (std::size_t i = first; i < n; ++i) {
    if (!rep.rows[i].ok) rep.gaps_nonincreasing = false;
    if (i > first && rep.rows[i].gap > rep.rows[i - 1].gap) rep.gaps_nonincreasing = false;
  }
  // a limit below 1e-6 |q|_inf is treated as the zero limit
  if (v > 1e-6 * q.max_norm()) rep.final_gap_threshold = cp.final_gap_fraction * v;
  else rep.final_gap_threshold = rep.rows.front().ok ? cp.zero_limit_fraction * rep.rows.front().speed_over_M : 0.0;
  rep.final_gap_ok = rep.rows.back().ok && rep.rows.back().gap < rep.final_gap_threshold;
  return rep;
}

}  // namespace kpp
