#pragma once

#include "domain.hpp"
#include "parallel.hpp"
#include "stream.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kpp {

struct Streamline {
  Vec2 seed{0.0, 0.0};
  std::vector<Vec2> samples;     // universal-cover positions, samples[0] == seed
  std::vector<Vec2> velocities;  // q at each sample
  double step = 0.0;
  double duration = 0.0;
  bool stagnated = false;  // stopped because |q| fell below the threshold
};

enum class TrajectoryTag { Stagnation, Closed, UnboundedPeriodic, UnboundedNonPeriodic, Undetermined };

inline const char* to_string(TrajectoryTag t) {
  switch (t) {
    case TrajectoryTag::Stagnation: return "Stagnation";
    case TrajectoryTag::Closed: return "Closed";
    case TrajectoryTag::UnboundedPeriodic: return "UnboundedPeriodic";
    case TrajectoryTag::UnboundedNonPeriodic: return "UnboundedNonPeriodic";
    case TrajectoryTag::Undetermined: return "Undetermined";
  }
  return "?";
}

struct TrajectoryClassification {
  TrajectoryTag tag = TrajectoryTag::Undetermined;
  std::optional<Vec2> period_vector;
  std::optional<double> return_time;
  double closest_return = std::numeric_limits<double>::infinity();  // over all section crossings
  double displacement_rate = 0.0;   // |end - seed| / duration
  double max_displacement = 0.0;    // in lattice periods
  bool wrapped = false;             // crossed a translated section without closing up
  std::optional<double> level_gap;  // |phi(seed) - nearest stagnation level| / range(phi)
};

class StreamContext;

struct ClassifyParams {
  double tol = 0.0;                  // <= 0 means 1e-6 * min(L1, L2)
  double unbounded_periods = 3.0;
  double section_radius = 0.5;       // fraction of min(L1, L2)
  // With a stream function available, a non-returning orbit on a stagnation
  // level (a separatrix) is unbounded non-periodic once it has moved
  // separatrix_periods lattice periods.
  const StreamContext* stream = nullptr;
  double level_tol = 1e-3;           // relative to the range of phi
  double separatrix_periods = 1.0;
};

// ---------------------------------------------------------------------------
// Velocity interpolation

class BilinearVelocity {
 public:
  explicit BilinearVelocity(const VectorField& q) : q_(q), qmax_(q.max_norm()) {}

  const PeriodicCell& cell() const { return q_.cell(); }
  double max_norm() const { return qmax_; }

  Vec2 operator()(const Vec2& p) const {
    const PeriodicCell& c = q_.cell();
    double fx = p.x() / c.h1();
    double fy = p.y() / c.h2();
    const double ix0 = std::floor(fx);
    const double tx = fx - ix0;
    const int i0 = detail::wrap(static_cast<int>(static_cast<long long>(ix0) % c.nx()), c.nx());
    const int i1 = detail::wrap(i0 + 1, c.nx());
    int j0, j1;
    double ty;
    if (c.is_strip()) {
      fy = std::clamp(fy, 0.0, static_cast<double>(c.n2()));
      j0 = std::min(static_cast<int>(std::floor(fy)), c.n2() - 1);
      ty = fy - j0;
      j1 = j0 + 1;
    } else {
      const double jy0 = std::floor(fy);
      ty = fy - jy0;
      j0 = detail::wrap(static_cast<int>(static_cast<long long>(jy0) % c.ny()), c.ny());
      j1 = detail::wrap(j0 + 1, c.ny());
    }
    const int p00 = c.index(i0, j0), p10 = c.index(i1, j0), p01 = c.index(i0, j1), p11 = c.index(i1, j1);
    const double w00 = (1 - tx) * (1 - ty), w10 = tx * (1 - ty), w01 = (1 - tx) * ty, w11 = tx * ty;
    const auto& u = q_.u();
    const auto& v = q_.v();
    return {w00 * u[p00] + w10 * u[p10] + w01 * u[p01] + w11 * u[p11],
            w00 * v[p00] + w10 * v[p10] + w01 * v[p01] + w11 * v[p11]};
  }

 private:
  const VectorField& q_;
  double qmax_;
};

// Stream function of q plus its stagnation levels: phi at nodes that are
// local minima of |q| with |q| <= 1e-3 ||q||_inf.
class StreamContext {
 public:
  explicit StreamContext(const VectorField& q, double admissibility_tol = 1e-8)
      : sf_(stream_from_velocity(q, admissibility_tol)) {
    const PeriodicCell& c = q.cell();
    const Eigen::VectorXd speed = (q.u().array().square() + q.v().array().square()).sqrt();
    const double cap = 1e-3 * speed.maxCoeff();
    const Eigen::VectorXd& phi = sf_.phi.values();
    range_ = phi.maxCoeff() - phi.minCoeff();
    for (int j = 0; j < c.ny(); ++j)
      for (int i = 0; i < c.nx(); ++i) {
        const int p = c.index(i, j);
        if (speed[p] > cap) continue;
        bool is_min = true;
        for (int dj = -1; dj <= 1 && is_min; ++dj)
          for (int di = -1; di <= 1; ++di) {
            int jj = j + dj;
            if (c.is_strip()) {
              if (jj < 0 || jj >= c.ny()) continue;
            } else {
              jj = detail::wrap(jj, c.ny());
            }
            if (speed[c.index(detail::wrap(i + di, c.nx()), jj)] < speed[p]) {
              is_min = false;
              break;
            }
          }
        if (is_min) levels_.push_back(phi[p]);
      }
    std::sort(levels_.begin(), levels_.end());
    levels_.erase(std::unique(levels_.begin(), levels_.end()), levels_.end());
  }

  const StreamFunction& stream() const { return sf_; }
  const std::vector<double>& stagnation_levels() const { return levels_; }

  double phi_at(const Vec2& p) const {
    const PeriodicCell& c = sf_.phi.cell();
    double fx = p.x() / c.h1(), fy = p.y() / c.h2();
    const int i0 = detail::wrap(static_cast<int>(std::floor(fx)) % c.nx(), c.nx());
    const double tx = fx - std::floor(fx);
    int j0;
    double ty;
    if (c.is_strip()) {
      fy = std::clamp(fy, 0.0, static_cast<double>(c.n2()));
      j0 = std::min(static_cast<int>(std::floor(fy)), c.n2() - 1);
      ty = fy - j0;
    } else {
      j0 = detail::wrap(static_cast<int>(std::floor(fy)) % c.ny(), c.ny());
      ty = fy - std::floor(fy);
    }
    const int i1 = detail::wrap(i0 + 1, c.nx());
    const int j1 = c.is_strip() ? j0 + 1 : detail::wrap(j0 + 1, c.ny());
    const auto& f = sf_.phi.values();
    return (1 - tx) * (1 - ty) * f[c.index(i0, j0)] + tx * (1 - ty) * f[c.index(i1, j0)] +
           (1 - tx) * ty * f[c.index(i0, j1)] + tx * ty * f[c.index(i1, j1)];
  }

  // distance from the level through p to the nearest stagnation level,
  // relative to the range of phi; empty when no stagnation level exists
  std::optional<double> level_gap(const Vec2& p) const {
    if (levels_.empty() || !(range_ > 0.0)) return std::nullopt;
    const double v = phi_at(p);
    auto it = std::lower_bound(levels_.begin(), levels_.end(), v);
    double g = std::numeric_limits<double>::infinity();
    if (it != levels_.end()) g = std::min(g, *it - v);
    if (it != levels_.begin()) g = std::min(g, v - *std::prev(it));
    return g / range_;
  }

 private:
  StreamFunction sf_;
  std::vector<double> levels_;
  double range_ = 0.0;
};

// Classical RK4 in the universal cover; stops once |q| < 1e-10 ||q||_inf.
inline Streamline integrate_streamline(const VectorField& q, const Vec2& seed, double step, double t_max) {
  const PeriodicCell& cell = q.cell();
  if (!(step > 0.0) || !(t_max >= step)) throw InputError("integrate_streamline needs step > 0 and t_max >= step");
  if (!seed.allFinite() || seed.x() < 0.0 || seed.x() > cell.L1() || seed.y() < 0.0 || seed.y() > cell.L2())
    throw InputError("seed lies outside the cell closure");

  const BilinearVelocity vel(q);
  const double stop = 1e-10 * vel.max_norm();
  Streamline s;
  s.seed = seed;
  s.step = step;
  const auto n_steps = static_cast<long long>(std::floor(t_max / step + 1e-9));
  s.samples.reserve(static_cast<std::size_t>(std::min<long long>(n_steps + 1, 1 << 22)));
  Vec2 p = seed;
  Vec2 v = vel(p);
  s.samples.push_back(p);
  s.velocities.push_back(v);
  for (long long n = 0; n < n_steps; ++n) {
    if (!(v.norm() >= stop) || vel.max_norm() == 0.0) {
      s.stagnated = true;
      break;
    }
    const Vec2 k1 = v;
    const Vec2 k2 = vel(p + 0.5 * step * k1);
    const Vec2 k3 = vel(p + 0.5 * step * k2);
    const Vec2 k4 = vel(p + step * k3);
    p += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (cell.is_strip()) p.y() = std::clamp(p.y(), 0.0, cell.L2());
    v = vel(p);
    s.samples.push_back(p);
    s.velocities.push_back(v);
  }
  if (!s.stagnated && !(v.norm() >= stop)) s.stagnated = true;
  s.duration = step * static_cast<double>(s.samples.size() - 1);
  return s;
}

namespace detail {

inline Vec2 hermite(const Vec2& p0, const Vec2& p1, const Vec2& m0, const Vec2& m1, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1;
}

struct SectionCrossing {
  long k = 0, l = 0;  // lattice translate a = (k L1, l L2)
  double offset = 0.0;
  double time = 0.0;
};

}  // namespace detail

// Return detection uses the transversal section through the seed (normal
// q(seed)) and its lattice translates.  A positive crossing of the section
// at seed + a within section_radius is located on the cubic Hermite
// interpolant of the step; its distance to seed + a is the return error.
// Without a return, an orbit is called unbounded non-periodic once it has
// drifted unbounded_periods lattice periods, or, when the stream function is
// known, once it has drifted separatrix_periods periods on a stagnation level.
inline TrajectoryClassification classify_streamline(const Streamline& s, const PeriodicCell& cell,
                                                    const ClassifyParams& params = {}) {
  const double Lmin = std::min(cell.L1(), cell.L2());
  const double tol = params.tol > 0.0 ? params.tol : 1e-6 * Lmin;
  const double r_sec = params.section_radius * Lmin;
  TrajectoryClassification out;
  const std::size_t n = s.samples.size();
  if (n >= 2 && s.duration > 0.0) out.displacement_rate = (s.samples.back() - s.seed).norm() / s.duration;
  for (const auto& p : s.samples) {
    const Vec2 d = p - s.seed;
    double m = std::abs(d.x()) / cell.L1();
    if (!cell.is_strip()) m = std::max(m, std::abs(d.y()) / cell.L2());
    out.max_displacement = std::max(out.max_displacement, m);
  }
  if (n < 2 || s.velocities.front().norm() == 0.0) {
    out.tag = s.stagnated ? TrajectoryTag::Stagnation : TrajectoryTag::Undetermined;
    return out;
  }

  if (params.stream) out.level_gap = params.stream->level_gap(s.seed);
  const Vec2 nu = s.velocities.front().normalized();
  const double h = s.step;
  std::vector<detail::SectionCrossing> crossings;
  for (std::size_t m = 0; m + 1 < n; ++m) {
    const Vec2& p0 = s.samples[m];
    const Vec2& p1 = s.samples[m + 1];
    const double reach = r_sec + (p1 - p0).norm();
    const long k0 = static_cast<long>(std::floor((p0.x() - s.seed.x()) / cell.L1()));
    const long l0 = cell.is_strip() ? 0 : static_cast<long>(std::floor((p0.y() - s.seed.y()) / cell.L2()));
    for (long k = k0; k <= k0 + 1; ++k) {
      for (long l = l0; l <= (cell.is_strip() ? l0 : l0 + 1); ++l) {
        const Vec2 target = s.seed + Vec2(k * cell.L1(), l * cell.L2());
        if ((p0 - target).norm() > reach) continue;
        const double g0 = (p0 - target).dot(nu), g1 = (p1 - target).dot(nu);
        if (!(g0 < 0.0 && g1 >= 0.0)) continue;
        const Vec2 m0 = h * s.velocities[m], m1 = h * s.velocities[m + 1];
        double a = 0.0, b = 1.0;
        for (int it = 0; it < 80 && b - a > 1e-16; ++it) {
          const double c = 0.5 * (a + b);
          if ((detail::hermite(p0, p1, m0, m1, c) - target).dot(nu) < 0.0) a = c;
          else b = c;
        }
        const double tau = 0.5 * (a + b);
        const double off = (detail::hermite(p0, p1, m0, m1, tau) - target).norm();
        if (off <= r_sec) crossings.push_back({k, l, off, (static_cast<double>(m) + tau) * h});
      }
    }
  }

  const detail::SectionCrossing* best = nullptr;
  auto length = [&](const detail::SectionCrossing& c) { return std::hypot(c.k * cell.L1(), c.l * cell.L2()); };
  for (const auto& c : crossings) {
    out.closest_return = std::min(out.closest_return, c.offset);
    if (c.k != 0 || c.l != 0) out.wrapped = out.wrapped || c.offset > tol;
    if (c.offset > tol) continue;
    if (!best || length(c) < length(*best) ||
        (length(c) == length(*best) && std::pair(c.k, c.l) < std::pair(best->k, best->l)) ||
        (c.k == best->k && c.l == best->l && c.time < best->time))
      best = &c;
  }
  if (best) {
    out.return_time = best->time;
    if (best->k == 0 && best->l == 0) {
      out.tag = TrajectoryTag::Closed;
    } else {
      out.tag = TrajectoryTag::UnboundedPeriodic;
      out.period_vector = Vec2(best->k * cell.L1(), best->l * cell.L2());
    }
    out.wrapped = false;
  } else if (out.max_displacement >= params.unbounded_periods ||
             (out.level_gap && *out.level_gap <= params.level_tol &&
              out.max_displacement >= params.separatrix_periods)) {
    out.tag = TrajectoryTag::UnboundedNonPeriodic;
  } else if (s.stagnated) {
    out.tag = TrajectoryTag::Stagnation;
  } else {
    out.tag = TrajectoryTag::Undetermined;
  }
  return out;
}

inline TrajectoryClassification classify_streamline(const Streamline& s, const PeriodicCell& cell, double tol) {
  ClassifyParams p;
  p.tol = tol;
  return classify_streamline(s, cell, p);
}

// ---------------------------------------------------------------------------
// Survey

struct SeedResult {
  Vec2 seed;
  TrajectoryClassification classification;
};

struct FlowSurvey {
  std::vector<SeedResult> seeds;
  std::optional<Vec2> period_vector;  // canonical: first nonzero component positive
  bool consistency_violation = false;
  int count(TrajectoryTag t) const {
    int c = 0;
    for (const auto& s : seeds) c += s.classification.tag == t;
    return c;
  }
};

inline Vec2 canonical_lattice_vector(Vec2 a) {
  if (a.x() < 0.0 || (a.x() == 0.0 && a.y() < 0.0)) a = -a;
  return a;
}

// Seeds on a k x k sub-lattice, k = floor(sqrt(n_seeds)): x offset by half a
// spacing, y on the lattice rows j L2 / k.
inline std::vector<Vec2> survey_seeds(const PeriodicCell& cell, int n_seeds) {
  const int k = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_seeds)) + 1e-12));
  std::vector<Vec2> seeds;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i) seeds.emplace_back((i + 0.5) * cell.L1() / k, j * cell.L2() / k);
  return seeds;
}

inline FlowSurvey survey_flow(const VectorField& q, int n_seeds, double step, double t_max,
                              const ClassifyParams& params = {}) {
  if (n_seeds < 4) throw InputError("survey_flow needs n_seeds >= 4");
  const PeriodicCell& cell = q.cell();
  const auto seeds = survey_seeds(cell, n_seeds);
  FlowSurvey survey;
  survey.seeds.resize(seeds.size());
  ClassifyParams p = params;
  std::optional<StreamContext> ctx;
  if (!p.stream && check_admissibility(q, cell).passed) {
    ctx.emplace(q);
    p.stream = &*ctx;
  }
  parallel_for(seeds.size(), [&](std::size_t i) {
    const Streamline s = integrate_streamline(q, seeds[i], step, t_max);
    survey.seeds[i] = {seeds[i], classify_streamline(s, cell, p)};
  });

  for (const auto& r : survey.seeds) {
    if (!r.classification.period_vector) continue;
    const Vec2 a = canonical_lattice_vector(*r.classification.period_vector);
    if (!survey.period_vector) {
      survey.period_vector = a;
    } else {
      const Vec2& b = *survey.period_vector;
      const double cross = a.x() * b.y() - a.y() * b.x();
      if (std::abs(cross) > 1e-9 * a.norm() * b.norm()) survey.consistency_violation = true;
      else if (a.norm() < b.norm()) survey.period_vector = a;
    }
  }
  if (survey.count(TrajectoryTag::Undetermined) == static_cast<int>(survey.seeds.size())) {
    std::string diag;
    for (const auto& r : survey.seeds)
      diag += "seed (" + std::to_string(r.seed.x()) + ", " + std::to_string(r.seed.y()) +
              "): closest return " + std::to_string(r.classification.closest_return) + ", displacement " +
              std::to_string(r.classification.max_displacement) + " periods\n";
    throw NumericalError("inconclusive survey: every seed is Undetermined", diag);
  }
  return survey;
}

}  // namespace kpp
