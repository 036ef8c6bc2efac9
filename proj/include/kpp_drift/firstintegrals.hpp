#pragma once

#include "domain.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <string>
#include <vector>

namespace kpp {

// D w = q1 D_x w + q2 D_y w with the centered stencils of DiffOps.
struct AdvectionOperator {
  VectorField q;
  SparseMat D;
};

inline AdvectionOperator advection_constraint_operator(const VectorField& q) {
  const DiffOps ops(q.cell());
  SparseMat D = SparseMat(q.u().asDiagonal() * ops.Dx) + SparseMat(q.v().asDiagonal() * ops.Dy);
  D.prune(0.0);
  return {q, std::move(D)};
}

// Dirichlet form int grad w . A grad w as a symmetric matrix.  Diagonal
// coefficients live on cell faces (forward differences, face-averaged
// a11/a22); the a12 cross term uses the centered node derivatives.  The kernel
// is the constants, and -W^{-1} K is the five-point Laplacian for A = I with
// natural no-flux rows on the strip boundary.
inline SparseMat stiffness_matrix(const TensorField& A) {
  const PeriodicCell& c = A.cell();
  const int nx = c.nx(), ny = c.ny(), N = c.size();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(8 * N);
  auto add_edge = [&](int p, int q, double k) {
    t.emplace_back(p, p, k);
    t.emplace_back(q, q, k);
    t.emplace_back(p, q, -k);
    t.emplace_back(q, p, -k);
  };
  const double h1 = c.h1(), h2 = c.h2();
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int p = c.index(i, j);
      const int px = c.index(detail::wrap(i + 1, nx), j);
      add_edge(p, px, c.row_weight(j) / (h1 * h1) * 0.5 * (A.a11()[p] + A.a11()[px]));
      if (!c.is_strip() || j + 1 < ny) {
        const int py = c.index(i, c.is_strip() ? j + 1 : detail::wrap(j + 1, ny));
        add_edge(p, py, h1 * h2 / (h2 * h2) * 0.5 * (A.a22()[p] + A.a22()[py]));
      }
    }
  }
  SparseMat K(N, N);
  K.setFromTriplets(t.begin(), t.end());
  if (A.a12().cwiseAbs().maxCoeff() > 0.0) {
    const DiffOps ops(c);
    const Eigen::VectorXd wa = c.weights().cwiseProduct(A.a12());
    const SparseMat cross = SparseMat(ops.Dx.transpose()) * wa.asDiagonal() * ops.Dy;
    K += cross + SparseMat(cross.transpose());
  }
  return K;
}

inline Vec2 drift_moment(const VectorField& q, const ScalarField& w) {
  require_same_cell(q.cell(), w.cell(), "drift_moment");
  const Eigen::VectorXd ww = q.cell().weights().cwiseProduct(w.values().cwiseAbs2());
  return {ww.dot(q.u()), ww.dot(q.v())};
}

// g(w) = int zeta w^2 - int grad w . A grad w
inline double feasibility_check(const TensorField& A, const ScalarField& zeta, const ScalarField& w) {
  require_same_cell(A.cell(), zeta.cell(), "feasibility_check");
  require_same_cell(A.cell(), w.cell(), "feasibility_check");
  const Eigen::VectorXd& v = w.values();
  const double growth = A.cell().weights().cwiseProduct(zeta.values()).dot(v.cwiseAbs2());
  return growth - v.dot(stiffness_matrix(A) * v);
}

// ---------------------------------------------------------------------------
// Kernel of the advection operator

struct KernelParams {
  double kernel_tol = 1e-8;  // relative to sigma_max
  int max_dim = 0;           // <= 0: 4 max(n1, n2)
  int cutoff = 16;           // highest trigonometric wavenumber per direction
};

struct KernelBasis {
  PeriodicCell cell;
  Eigen::MatrixXd vectors;                // node values, columns orthonormal in the cell quadrature
  std::vector<double> singular_values;    // retained, ascending
  double first_rejected = 0.0;            // smallest singular value above the threshold
  double sigma_max = 0.0;
  double spectral_gap = 0.0;              // first_rejected / largest retained
  double kernel_tol = 0.0;
  int resolved_dim = 0;                   // size of the trigonometric search space

  int dim() const { return static_cast<int>(vectors.cols()); }
  ScalarField element(int k) const { return {cell, vectors.col(k)}; }
};

namespace detail {

// Real trigonometric functions on one grid direction, orthonormal for the
// direction's quadrature weights, with their discrete derivatives.
struct TrigBasis1D {
  Eigen::MatrixXd f, df;  // samples x modes
};

inline Eigen::MatrixXd apply_1d_derivative(const Eigen::MatrixXd& f, double h, bool periodic) {
  const int n = static_cast<int>(f.rows());
  Eigen::MatrixXd d(f.rows(), f.cols());
  for (int r = 0; r < n; ++r) {
    if (periodic) {
      d.row(r) = (f.row(wrap(r + 1, n)) - f.row(wrap(r - 1, n))) / (2.0 * h);
    } else if (r == 0) {
      d.row(r) = (-1.5 * f.row(0) + 2.0 * f.row(1) - 0.5 * f.row(2)) / h;
    } else if (r == n - 1) {
      d.row(r) = (1.5 * f.row(r) - 2.0 * f.row(r - 1) + 0.5 * f.row(r - 2)) / h;
    } else {
      d.row(r) = (f.row(r + 1) - f.row(r - 1)) / (2.0 * h);
    }
  }
  return d;
}

inline TrigBasis1D periodic_trig_basis(int n, double L, int K) {
  const double h = L / n;
  TrigBasis1D b;
  b.f.resize(n, 2 * K + 1);
  for (int i = 0; i < n; ++i) {
    const double x = i * h;
    b.f(i, 0) = std::sqrt(1.0 / L);
    for (int k = 1; k <= K; ++k) {
      b.f(i, 2 * k - 1) = std::sqrt(2.0 / L) * std::cos(2.0 * kPi * k * x / L);
      b.f(i, 2 * k) = std::sqrt(2.0 / L) * std::sin(2.0 * kPi * k * x / L);
    }
  }
  b.df = apply_1d_derivative(b.f, h, true);
  return b;
}

// cos(pi m y / L), m = 0..K on n+1 nodes including both ends (trapezoid weights)
inline TrigBasis1D cosine_basis(int n, double L, int K) {
  const double h = L / n;
  TrigBasis1D b;
  b.f.resize(n + 1, K + 1);
  for (int j = 0; j <= n; ++j)
    for (int m = 0; m <= K; ++m)
      b.f(j, m) = std::sqrt((m == 0 ? 1.0 : 2.0) / L) * std::cos(kPi * m * j * h / L);
  b.df = apply_1d_derivative(b.f, h, false);
  return b;
}

// rows i, columns a + m b: u_a(i) v_b(i)
inline Eigen::MatrixXd pair_products(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V) {
  const Eigen::Index m = U.cols();
  Eigen::MatrixXd P(U.rows(), m * m);
  for (Eigen::Index b = 0; b < m; ++b)
    for (Eigen::Index a = 0; a < m; ++a) P.col(a + m * b) = U.col(a).cwiseProduct(V.col(b));
  return P;
}

// sum_ij F(i,j) a_al(i) a_be(i) c_ga(j) c_de(j), returned in the 2D basis
// ordering (al, ga) -> ga m1 + al
inline Eigen::MatrixXd separable_form(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Ax,
                                      const Eigen::MatrixXd& Bx, const Eigen::MatrixXd& Cy,
                                      const Eigen::MatrixXd& Dy) {
  const Eigen::Index m1 = Ax.cols(), m2 = Cy.cols();
  const Eigen::MatrixXd R = pair_products(Ax, Bx).transpose() * (F * pair_products(Cy, Dy));
  Eigen::MatrixXd G(m1 * m2, m1 * m2);
  for (Eigen::Index de = 0; de < m2; ++de)
    for (Eigen::Index be = 0; be < m1; ++be)
      for (Eigen::Index ga = 0; ga < m2; ++ga)
        for (Eigen::Index al = 0; al < m1; ++al)
          G(ga * m1 + al, de * m1 + be) = R(al + m1 * be, ga + m2 * de);
  return G;
}

// node values of sum_c v_c X_al Y_ga for each column of V
inline Eigen::MatrixXd expand(const TrigBasis1D& X, const TrigBasis1D& Y, const Eigen::MatrixXd& V) {
  const Eigen::Index m1 = X.f.cols(), m2 = Y.f.cols(), nx = X.f.rows(), ny = Y.f.rows();
  Eigen::MatrixXd out(nx * ny, V.cols());
  for (Eigen::Index c = 0; c < V.cols(); ++c) {
    const Eigen::Map<const Eigen::MatrixXd> coef(V.col(c).data(), m1, m2);
    const Eigen::MatrixXd field = X.f * coef * Y.f.transpose();  // nx x ny, x fastest
    out.col(c) = Eigen::Map<const Eigen::VectorXd>(field.data(), nx * ny);
  }
  return out;
}

}  // namespace detail

// Discrete first integrals: the near-null space of D restricted to the
// resolved trigonometric functions (wavenumbers up to min(n/4, cutoff) per
// periodic direction, cosines up to twice that across the strip).  On the
// full grid space the centered operator has spurious grid-scale null
// vectors, so the search space is limited to what the grid resolves.
// Candidates come from the Gram matrix of D on that space, assembled from
// separable sums; their singular values are then recomputed from D w itself
// so that the kernel_tol test is not limited by squaring.
inline KernelBasis kernel_basis(const AdvectionOperator& op, const KernelParams& params = {}) {
  if (!(params.kernel_tol > 0.0)) throw InputError("kernel_tol must be positive");
  const VectorField& q = op.q;
  const PeriodicCell& c = q.cell();
  const int max_dim = params.max_dim > 0 ? params.max_dim : 4 * std::max(c.n1(), c.n2());
  const int Kx = std::max(1, std::min(c.n1() / 4, params.cutoff));
  const auto X = detail::periodic_trig_basis(c.n1(), c.L1(), Kx);
  const auto Y = c.is_strip() ? detail::cosine_basis(c.n2(), c.L2(), std::max(1, std::min(c.n2() / 2, 2 * params.cutoff)))
                              : detail::periodic_trig_basis(c.n2(), c.L2(), std::max(1, std::min(c.n2() / 4, params.cutoff)));
  const Eigen::Index m1 = X.f.cols(), m2 = Y.f.cols(), m = m1 * m2;

  KernelBasis kb{c, {}, {}, 0.0, 0.0, 0.0, params.kernel_tol, static_cast<int>(m)};

  const Eigen::VectorXd w = c.weights();
  const Eigen::VectorXd f11 = w.cwiseProduct(q.u().cwiseAbs2());
  const Eigen::VectorXd f12 = w.cwiseProduct(q.u().cwiseProduct(q.v()));
  const Eigen::VectorXd f22 = w.cwiseProduct(q.v().cwiseAbs2());
  auto as_grid = [&](const Eigen::VectorXd& v) {
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), c.nx(), c.ny());
  };

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, m);
  if (f11.cwiseAbs().maxCoeff() > 0.0) G += detail::separable_form(as_grid(f11), X.df, X.df, Y.f, Y.f);
  if (f22.cwiseAbs().maxCoeff() > 0.0) G += detail::separable_form(as_grid(f22), X.f, X.f, Y.df, Y.df);
  if (f12.cwiseAbs().maxCoeff() > 0.0) {
    const Eigen::MatrixXd T = detail::separable_form(as_grid(f12), X.df, X.f, Y.f, Y.df);
    G += T + T.transpose();
  }
  G = 0.5 * (G + G.transpose());

  // candidate order: ascending Gram eigenvalue; for q = 0 ascending wavenumber
  Eigen::MatrixXd cand;
  const double gmax = G.cwiseAbs().maxCoeff();
  if (gmax == 0.0) {
    const int take = static_cast<int>(std::min<Eigen::Index>(m, max_dim));
    std::vector<Eigen::Index> order(m);
    for (Eigen::Index k = 0; k < m; ++k) order[k] = k;
    auto freq = [&](Eigen::Index k) {
      const Eigen::Index a = k % m1, g = k / m1;
      return std::max((a + 1) / 2, c.is_strip() ? g : (g + 1) / 2);
    };
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return freq(a) < freq(b); });
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(m, take);
    for (int k = 0; k < take; ++k) V(order[k], k) = 1.0;
    kb.vectors = detail::expand(X, Y, V);
    kb.singular_values.assign(take, 0.0);
    kb.first_rejected = 0.0;
    kb.spectral_gap = std::numeric_limits<double>::infinity();
    return kb;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success) throw NumericalError("kernel_basis: Gram eigen-decomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lmax = std::max(ev[m - 1], 0.0);
  kb.sigma_max = std::sqrt(lmax);
  const double cand_ratio = std::max(1e4 * params.kernel_tol * params.kernel_tol, 1e-10);
  Eigen::Index nc = 0;
  while (nc < m && nc < 2 * max_dim && ev[nc] <= cand_ratio * lmax) ++nc;
  nc = std::max<Eigen::Index>(nc, 1);
  const Eigen::MatrixXd C = detail::expand(X, Y, es.eigenvectors().leftCols(nc));

  // singular values of sqrt(W) D on the candidate span
  const DiffOps ops(c);
  Eigen::MatrixXd DC = q.u().asDiagonal() * (ops.Dx * C) + q.v().asDiagonal() * (ops.Dy * C);
  DC = w.cwiseSqrt().asDiagonal() * DC;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(DC);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(nc).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();  // descending
  const double thresh = params.kernel_tol * kb.sigma_max;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = nc - 1; k >= 0; --k) {
    if (sv[k] <= thresh && static_cast<int>(keep.size()) < max_dim) keep.push_back(k);
    else if (sv[k] > thresh && kb.first_rejected == 0.0) kb.first_rejected = sv[k];
  }
  if (kb.first_rejected == 0.0) {
    if (static_cast<Eigen::Index>(keep.size()) < nc) kb.first_rejected = sv[nc - 1 - keep.size()];
    else if (nc < m) kb.first_rejected = std::sqrt(std::max(ev[nc], 0.0));
  }
  if (keep.empty()) throw NumericalError("kernel_basis: constants were not found in the kernel");
  Eigen::MatrixXd Vk(nc, keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    Vk.col(k) = svd.matrixV().col(keep[k]);
    kb.singular_values.push_back(sv[keep[k]]);
  }
  kb.vectors = C * Vk;
  const double largest = kb.singular_values.back();
  kb.spectral_gap = largest > 0.0 ? kb.first_rejected / largest : std::numeric_limits<double>::infinity();
  return kb;
}

inline KernelBasis kernel_basis(const AdvectionOperator& op, double kernel_tol, int max_dim) {
  KernelParams p;
  p.kernel_tol = kernel_tol;
  p.max_dim = max_dim;
  return kernel_basis(op, p);
}

// ---------------------------------------------------------------------------
// Large-drift limit

struct LimitSpeedResult {
  double value = 0.0;
  ScalarField maximizer;
  bool constraint_active = false;
  double multiplier = 0.0;
  double optimality_residual = 0.0;
  double feasibility_residual = 0.0;  // g(w*) / int w*^2
  int kernel_dim = 0;
  std::vector<std::pair<double, double>> mu_trace;  // (mu, g(v(mu)))
};

namespace detail {

struct TopPair {
  double theta = 0.0;
  Eigen::VectorXd v;
};

// Top eigenpair of (Nm, Mm); a multiple top eigenvalue is resolved by
// maximizing H inside the top eigenspace.
inline TopPair top_pair(const Eigen::MatrixXd& Nm, const Eigen::MatrixXd& Mm, const Eigen::MatrixXd& H) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Nm, Mm);
  if (es.info() != Eigen::Success) throw NumericalError("limit_speed: reduced eigenproblem failed");
  const Eigen::Index d = Nm.rows();
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::Index first = d - 1;
  while (first > 0 && ev[d - 1] - ev[first - 1] <= 1e-12 * scale) --first;
  const Eigen::MatrixXd E = es.eigenvectors().rightCols(d - first);
  TopPair t{ev[d - 1], E.col(E.cols() - 1)};
  if (E.cols() > 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sub(E.transpose() * H * E);
    t.v = E * sub.eigenvectors().col(E.cols() - 1);
  }
  t.v /= std::sqrt(t.v.dot(Mm * t.v));
  return t;
}

}  // namespace detail

// max over w in the kernel span with int zeta w^2 >= int grad w.A grad w of
// int (q.e) w^2 / int w^2, through the multiplier mu >= 0 of the constraint.
inline LimitSpeedResult limit_speed(const TensorField& A, const VectorField& q, const ScalarField& zeta,
                                    const Direction& e, const KernelBasis& kernel) {
  const PeriodicCell& c = q.cell();
  require_same_cell(c, A.cell(), "limit_speed: diffusion");
  require_same_cell(c, zeta.cell(), "limit_speed: zeta");
  require_same_cell(c, kernel.cell, "limit_speed: kernel");
  if (kernel.dim() == 0) throw InputError("limit_speed: empty kernel");
  const Vec2 et = e.lifted(c);

  const Eigen::VectorXd w = c.weights();
  const Eigen::VectorXd qe = q.dot(et);
  const Eigen::MatrixXd& V = kernel.vectors;
  const Eigen::MatrixXd WV = w.asDiagonal() * V;
  const Eigen::MatrixXd Mm = V.transpose() * WV;
  const Eigen::MatrixXd Nm = V.transpose() * (qe.asDiagonal() * WV);
  const Eigen::MatrixXd Z = V.transpose() * (zeta.values().asDiagonal() * WV);
  const Eigen::MatrixXd S = V.transpose() * (stiffness_matrix(A) * V);
  const Eigen::MatrixXd H = 0.5 * (Z - S + (Z - S).transpose());

  LimitSpeedResult r{0.0, ScalarField::constant(c, 1.0 / std::sqrt(c.area())), false, 0.0, 0.0, 0.0,
                     kernel.dim(), {}};
  const double qe_inf = qe.cwiseAbs().maxCoeff();
  if (qe_inf == 0.0 || Nm.cwiseAbs().maxCoeff() < 1e-14) return r;

  auto g_of = [&](const Eigen::VectorXd& v) { return v.dot(H * v); };
  const double hscale = std::max(H.cwiseAbs().maxCoeff(), 1e-300);
  const double feas_tol = 1e-12 * hscale;

  detail::TopPair best = detail::top_pair(0.5 * (Nm + Nm.transpose()), Mm, H);
  double g = g_of(best.v);
  r.mu_trace.emplace_back(0.0, g);
  double mu = 0.0;
  if (g < -feas_tol) {
    r.constraint_active = true;
    double lo = 0.0, hi = qe_inf / hscale;
    detail::TopPair at_hi;
    for (int it = 0;; ++it) {
      at_hi = detail::top_pair(Nm + hi * H, Mm, H);
      const double gh = g_of(at_hi.v);
      r.mu_trace.emplace_back(hi, gh);
      if (gh >= 0.0) break;
      lo = hi;
      hi *= 2.0;
      if (it > 200) {
        std::string trace;
        for (auto& [m, gg] : r.mu_trace) trace += "mu=" + std::to_string(m) + " g=" + std::to_string(gg) + "\n";
        throw NumericalError("limit_speed: could not bracket the multiplier", trace);
      }
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      detail::TopPair t = detail::top_pair(Nm + mid * H, Mm, H);
      const double gm = g_of(t.v);
      r.mu_trace.emplace_back(mid, gm);
      if (gm >= 0.0) {
        hi = mid;
        at_hi = std::move(t);
        if (gm <= feas_tol) break;
      } else {
        lo = mid;
      }
    }
    best = at_hi;
    mu = hi;
    g = g_of(best.v);
  }
  const double value = best.v.dot(Nm * best.v) / best.v.dot(Mm * best.v);
  const Eigen::VectorXd resid = (Nm + mu * H) * best.v - (value + mu * g) * (Mm * best.v);
  r.value = (value < 0.0 && value > -1e-10 * qe_inf) ? 0.0 : value;
  r.multiplier = mu;
  r.feasibility_residual = g / best.v.dot(Mm * best.v);
  r.optimality_residual = resid.norm();
  Eigen::VectorXd field = V * best.v;
  if (w.dot(field) < 0.0) field = -field;
  r.maximizer = ScalarField(c, std::move(field));
  return r;
}

}  // namespace kpp
