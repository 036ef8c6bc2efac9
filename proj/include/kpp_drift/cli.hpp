#pragma once

// Command-line driver.  Needs the vendored toml.hpp, CLI11.hpp and json.hpp.

#include "domain.hpp"
#include "firstintegrals.hpp"
#include "speed.hpp"
#include "stream.hpp"
#include "trajectories.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <toml.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef KPP_DRIFT_VERSION
#define KPP_DRIFT_VERSION "0.1.0"
#endif

namespace kpp::cli {

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"check-flow", "stream",    "trajectories", "kernel",
                                          "limit-speed", "min-speed", "converge"};
  return c;
}

// ---------------------------------------------------------------------------
// Config reading

namespace detail {

inline std::string where(const toml::node& n) {
  const auto& b = n.source().begin;
  return b ? "line " + std::to_string(b.line) + ", column " + std::to_string(b.column) : "override";
}

// Typed access to one table; every key read is recorded so leftovers can be
// rejected as unknown.
class Section {
 public:
  Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  double number(const std::string& key, double def) {
    const toml::node* n = get(key);
    if (!n) return def;
    if (auto v = n->value_exact<double>()) return *v;
    if (auto v = n->value_exact<int64_t>()) return static_cast<double>(*v);
    throw bad(key, *n, "a number");
  }

  int integer(const std::string& key, int def) {
    const toml::node* n = get(key);
    if (!n) return def;
    if (auto v = n->value_exact<int64_t>()) return static_cast<int>(*v);
    throw bad(key, *n, "an integer");
  }

  bool boolean(const std::string& key, bool def) {
    const toml::node* n = get(key);
    if (!n) return def;
    if (auto v = n->value_exact<bool>()) return *v;
    throw bad(key, *n, "a boolean");
  }

  std::string string(const std::string& key, const std::string& def) {
    const toml::node* n = get(key);
    if (!n) return def;
    if (auto v = n->value_exact<std::string>()) return *v;
    throw bad(key, *n, "a string");
  }

  std::optional<std::vector<double>> numbers(const std::string& key) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    const toml::array* a = n->as_array();
    if (!a) throw bad(key, *n, "an array of numbers");
    std::vector<double> out;
    for (const auto& el : *a) {
      if (auto v = el.value<double>()) out.push_back(*v);
      else throw bad(key, el, "an array of numbers");
    }
    return out;
  }

  // array of fixed-length numeric rows, e.g. seeds = [[0.25, 0.125], ...]
  std::optional<std::vector<std::vector<double>>> rows(const std::string& key, std::size_t width) {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    const toml::array* a = n->as_array();
    if (!a) throw bad(key, *n, "an array of arrays");
    std::vector<std::vector<double>> out;
    for (const auto& el : *a) {
      const toml::array* r = el.as_array();
      if (!r || r->size() != width)
        throw bad(key, el, "an array of " + std::to_string(width) + "-element arrays");
      std::vector<double> row;
      for (const auto& x : *r) {
        if (auto v = x.value<double>()) row.push_back(*v);
        else throw bad(key, x, "numeric entries");
      }
      out.push_back(std::move(row));
    }
    return out;
  }

  void reject_unknown() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_)
      if (!used_.count(std::string(k.str())))
        throw InputError("config: unknown key '" + name_ + "." + std::string(k.str()) + "' (" + where(v) + ")");
  }

 private:
  const toml::node* get(const std::string& key) {
    used_.insert(key);
    return t_ ? t_->get(key) : nullptr;
  }
  InputError bad(const std::string& key, const toml::node& n, const std::string& want) const {
    return InputError("config: field '" + name_ + "." + key + "' must be " + want + " (" + where(n) + ")");
  }

  const toml::table* t_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace detail

struct RunConfig {
  // [cell]
  std::string kind = "torus";
  double L1 = 1.0, L2 = 1.0;
  int n1 = 64, n2 = 64;
  // [flow]
  FlowSpec flow;
  double admissibility_tol = 1e-8;
  // [diffusion]
  double a11 = 1.0, a12 = 0.0, a22 = 1.0, diffusion_eps = 0.0;
  // [zeta]
  double zeta = 1.0, zeta_eps = 0.0, rho = 0.5;
  // [direction]
  std::vector<double> e{1.0, 0.0};
  // [stream]
  double hodge_tol = 1e-3;
  // [trajectories]
  std::vector<Vec2> seeds;  // empty: survey lattice
  int n_seeds = 16;
  double step = 0.005, t_max = 20.0;
  ClassifyParams classify;
  // [kernel]
  KernelParams kernel;
  // [limit_speed]
  std::vector<std::vector<double>> directions;  // empty: [direction] e
  bool dump_maximizer = false;
  // [speed]
  double M = 1.0;
  SearchParams search;
  // [converge]
  std::vector<double> M_list{1, 4, 16, 64, 256};
  double final_gap_fraction = 0.1, zero_limit_fraction = 0.05;

  std::string echo;  // normalized TOML after overrides

  PeriodicCell cell() const {
    if (kind != "torus" && kind != "strip") throw InputError("config: cell.kind must be \"torus\" or \"strip\"");
    return {kind == "torus" ? CellKind::Torus : CellKind::Strip, L1, L2, n1, n2};
  }
};

namespace detail {

inline void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InputError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  std::vector<std::string> parts;
  for (std::size_t b = 0;;) {
    const auto dot = path.find('.', b);
    parts.push_back(path.substr(b, dot == std::string::npos ? std::string::npos : dot - b));
    if (dot == std::string::npos) break;
    b = dot + 1;
  }
  toml::table* t = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    toml::node* n = t->get(parts[i]);
    if (!n) n = &t->insert_or_assign(parts[i], toml::table{}).first->second;
    t = n->as_table();
    if (!t) throw InputError("--set " + path + ": '" + parts[i] + "' is not a table");
  }
  if (const toml::node* old = t->get(parts.back()); old && old->is_table())
    throw InputError("--set " + path + ": only scalar or array fields can be overridden");
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + text);
  } catch (const toml::parse_error&) {
    parsed = toml::table{{"v", text}};  // bare words are strings
  }
  t->insert_or_assign(parts.back(), std::move(*parsed.get("v")));
}

}  // namespace detail

inline RunConfig parse_config(toml::table root) {
  static const std::set<std::string> tables{"cell",         "flow",   "diffusion",   "zeta",  "direction", "stream",
                                            "trajectories", "kernel", "limit_speed", "speed", "converge"};
  for (const auto& [k, v] : root) {
    if (!tables.count(std::string(k.str())))
      throw InputError("config: unknown table '" + std::string(k.str()) + "' (" + detail::where(v) + ")");
    if (!v.is_table()) throw InputError("config: '" + std::string(k.str()) + "' must be a table");
  }
  auto section = [&](const char* name) { return detail::Section(root[name].as_table(), name); };
  RunConfig c;

  auto cell = section("cell");
  c.kind = cell.string("kind", c.kind);
  c.L1 = cell.number("L1", c.L1);
  c.L2 = cell.number("L2", c.L2);
  c.n1 = cell.integer("n1", c.n1);
  c.n2 = cell.integer("n2", c.n2);
  cell.reject_unknown();

  auto flow = section("flow");
  c.flow.name = flow.string("name", c.flow.name);
  c.flow.amplitude = flow.number("amplitude", c.flow.amplitude);
  c.flow.mode = flow.integer("mode", c.flow.mode);
  c.flow.mode_x = flow.integer("mode_x", c.flow.mode_x);
  c.flow.mode_y = flow.integer("mode_y", c.flow.mode_y);
  c.flow.q1 = flow.number("q1", c.flow.q1);
  c.flow.q2 = flow.number("q2", c.flow.q2);
  if (auto rows = flow.rows("coefficients", 4))
    for (const auto& r : *rows) {
      if (r[0] != std::round(r[0]) || r[1] != std::round(r[1]))
        throw InputError("config: flow.coefficients wavenumbers must be integers");
      c.flow.coefficients.push_back({static_cast<int>(r[0]), static_cast<int>(r[1]), r[2], r[3]});
    }
  c.admissibility_tol = flow.number("admissibility_tol", c.admissibility_tol);
  flow.reject_unknown();

  auto diff = section("diffusion");
  c.a11 = diff.number("a11", c.a11);
  c.a12 = diff.number("a12", c.a12);
  c.a22 = diff.number("a22", c.a22);
  c.diffusion_eps = diff.number("modulation", c.diffusion_eps);
  diff.reject_unknown();

  auto zeta = section("zeta");
  c.zeta = zeta.number("value", c.zeta);
  c.zeta_eps = zeta.number("modulation", c.zeta_eps);
  c.rho = zeta.number("rho", c.rho);
  zeta.reject_unknown();

  auto dir = section("direction");
  if (auto e = dir.numbers("e")) c.e = *e;
  dir.reject_unknown();

  auto st = section("stream");
  c.hodge_tol = st.number("tol", c.hodge_tol);
  st.reject_unknown();

  auto tr = section("trajectories");
  if (auto s = tr.rows("seeds", 2))
    for (const auto& r : *s) c.seeds.emplace_back(r[0], r[1]);
  c.n_seeds = tr.integer("n_seeds", c.n_seeds);
  c.step = tr.number("step", c.step);
  c.t_max = tr.number("t_max", c.t_max);
  c.classify.tol = tr.number("tol", c.classify.tol);
  c.classify.unbounded_periods = tr.number("unbounded_periods", c.classify.unbounded_periods);
  c.classify.section_radius = tr.number("section_radius", c.classify.section_radius);
  c.classify.level_tol = tr.number("level_tol", c.classify.level_tol);
  c.classify.separatrix_periods = tr.number("separatrix_periods", c.classify.separatrix_periods);
  tr.reject_unknown();

  auto ker = section("kernel");
  c.kernel.kernel_tol = ker.number("tol", c.kernel.kernel_tol);
  c.kernel.max_dim = ker.integer("max_dim", c.kernel.max_dim);
  c.kernel.cutoff = ker.integer("cutoff", c.kernel.cutoff);
  ker.reject_unknown();

  auto ls = section("limit_speed");
  if (auto d = ls.rows("directions", 2)) c.directions = *d;
  c.dump_maximizer = ls.boolean("dump_maximizer", c.dump_maximizer);
  ls.reject_unknown();

  auto sp = section("speed");
  c.M = sp.number("M", c.M);
  c.search.lambda_lo = sp.number("lambda_lo", c.search.lambda_lo);
  c.search.lambda_hi = sp.number("lambda_hi", c.search.lambda_hi);
  c.search.expand_factor = sp.number("expand_factor", c.search.expand_factor);
  c.search.max_expansions = sp.integer("max_expansions", c.search.max_expansions);
  c.search.tol = sp.number("tol", c.search.tol);
  c.search.initial_samples = sp.integer("initial_samples", c.search.initial_samples);
  c.search.eigen.tol = sp.number("eigen_tol", c.search.eigen.tol);
  c.search.eigen.max_iter = sp.integer("eigen_max_iter", c.search.eigen.max_iter);
  sp.reject_unknown();

  auto cv = section("converge");
  if (auto m = cv.numbers("M_list")) c.M_list = *m;
  c.final_gap_fraction = cv.number("final_gap_fraction", c.final_gap_fraction);
  c.zero_limit_fraction = cv.number("zero_limit_fraction", c.zero_limit_fraction);
  cv.reject_unknown();

  std::ostringstream os;
  os << root;
  c.echo = os.str();
  return c;
}

// ---------------------------------------------------------------------------
// Validated inputs

struct Problem {
  PeriodicCell cell;
  VectorField q;
  TensorField A;
  ReactionSpec reaction;
  Direction e;
  std::vector<Direction> directions;
  AdmissibilityReport admissibility;
};

inline Direction make_direction(const std::vector<double>& v, const PeriodicCell& cell, const char* what) {
  if (v.size() != 2) throw InputError(std::string("config: ") + what + " must have two components");
  const Direction d = Direction::normalized(v[0], v[1]);
  d.lifted(cell);
  return d;
}

// Builds every field and checks every parameter before any computation.
inline Problem validate(const RunConfig& c, const std::string& command) {
  const PeriodicCell cell = c.cell();
  VectorField q = sample_flow(c.flow, cell);
  TensorField A = make_diffusion(cell, c.a11, c.a12, c.a22, c.diffusion_eps);
  ReactionSpec reaction(make_zeta(cell, c.zeta, c.zeta_eps), c.rho);
  Direction e = make_direction(c.e, cell, "direction.e");
  std::vector<Direction> dirs;
  for (const auto& d : c.directions) dirs.push_back(make_direction(d, cell, "limit_speed.directions"));
  if (dirs.empty()) dirs.push_back(e);

  if (!(c.admissibility_tol > 0.0)) throw InputError("config: flow.admissibility_tol must be positive");
  if (!(c.hodge_tol > 0.0)) throw InputError("config: stream.tol must be positive");
  if (!(c.step > 0.0) || !(c.t_max >= c.step)) throw InputError("config: trajectories need step > 0 and t_max >= step");
  if (c.seeds.empty() && c.n_seeds < 4) throw InputError("config: trajectories.n_seeds must be >= 4");
  for (const auto& s : c.seeds)
    if (!(s.x() >= 0.0 && s.x() <= cell.L1() && s.y() >= 0.0 && s.y() <= cell.L2()))
      throw InputError("config: trajectory seed outside the cell");
  if (!(c.kernel.kernel_tol > 0.0)) throw InputError("config: kernel.tol must be positive");
  if (c.kernel.cutoff < 1) throw InputError("config: kernel.cutoff must be >= 1");
  if (!(c.M >= 0.0)) throw InputError("config: speed.M must be >= 0");
  if (!(c.search.lambda_lo > 0.0) || !(c.search.lambda_hi > c.search.lambda_lo))
    throw InputError("config: speed needs 0 < lambda_lo < lambda_hi");
  if (!(c.search.tol > 0.0) || c.search.initial_samples < 3 || !(c.search.expand_factor > 1.0) ||
      c.search.max_expansions < 0 || !(c.search.eigen.tol > 0.0) || c.search.eigen.max_iter < 1)
    throw InputError("config: invalid speed search parameters");
  if (c.M_list.size() < 2) throw InputError("config: converge.M_list needs at least two entries");
  for (std::size_t i = 0; i < c.M_list.size(); ++i)
    if (!(c.M_list[i] > 0.0) || (i > 0 && !(c.M_list[i] > c.M_list[i - 1])))
      throw InputError("config: converge.M_list must be positive and increasing");

  AdmissibilityReport adm = check_admissibility(q, cell, c.admissibility_tol);
  if (!adm.passed) {
    std::string msg = "flow '" + c.flow.name + "' is not admissible:";
    for (const auto& v : adm.violations) msg += " " + v + ";";
    if (command != "trajectories") throw InputError(msg);
  }
  return {cell, std::move(q), std::move(A), std::move(reaction), e, std::move(dirs), std::move(adm)};
}

// ---------------------------------------------------------------------------
// Output

inline std::string num(double v) { return kpp::detail::format_double(v); }

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& p, const std::string& header) : path_(p), out_(p, std::ios::binary) {
    if (!out_) throw InputError("cannot write " + p.string());
    out_ << header << '\n';
  }
  template <class... T>
  void row(const T&... cols) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cols), first = false), ...);
    out_ << '\n';
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }

  std::filesystem::path path_;
  std::ofstream out_;
};

struct RunReport {
  std::string command;
  std::string config;
  std::vector<std::string> outputs;
  nlohmann::ordered_json verdicts = nlohmann::ordered_json::object();
  double wall_time = 0.0;

  std::string json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = KPP_DRIFT_VERSION;
    j["config"] = config;
    j["wall_time_s"] = wall_time;
    j["outputs"] = outputs;
    j["verdicts"] = verdicts;
    return j.dump(2);
  }
};

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline std::string tag_name(TrajectoryTag t) { return to_string(t); }

inline void cmd_check_flow(const Problem& p, const std::filesystem::path& out, RunReport& rep) {
  CsvFile f(out / "check_flow.csv", "max_divergence,mean_q1,mean_q2,max_boundary_normal,q_inf,passed");
  const auto& a = p.admissibility;
  f.row(a.max_divergence, a.mean_q1, a.mean_q2, a.max_boundary_normal, a.q_inf, a.passed);
  rep.outputs.push_back(f.path().string());
  rep.verdicts["admissible"] = a.passed;
}

inline void cmd_stream(const RunConfig& c, const Problem& p, const std::filesystem::path& out, RunReport& rep) {
  const StreamFunction sf = stream_from_velocity(p.q, c.admissibility_tol);
  const HodgeReport h = verify_hodge(p.q, sf, c.hodge_tol);
  CsvFile f(out / "stream.csv", "x,y,phi");
  for (int j = 0; j < p.cell.ny(); ++j)
    for (int i = 0; i < p.cell.nx(); ++i) f.row(p.cell.x(i), p.cell.y(j), sf.phi.values()[p.cell.index(i, j)]);
  rep.outputs.push_back(f.path().string());
  rep.verdicts["residual"] = sf.residual;
  rep.verdicts["hodge_relative_residual"] = h.relative_residual;
  rep.verdicts["boundary_oscillation"] = h.boundary_oscillation;
  rep.verdicts["hodge_passed"] = h.passed;
}

inline void cmd_trajectories(const RunConfig& c, const Problem& p, const std::filesystem::path& out,
                             RunReport& rep) {
  FlowSurvey survey;
  if (c.seeds.empty()) {
    survey = survey_flow(p.q, c.n_seeds, c.step, c.t_max, c.classify);
  } else {
    ClassifyParams cp = c.classify;
    std::optional<StreamContext> ctx;
    if (p.admissibility.passed) {
      ctx.emplace(p.q, c.admissibility_tol);
      cp.stream = &*ctx;
    }
    survey.seeds.resize(c.seeds.size());
    parallel_for(c.seeds.size(), [&](std::size_t i) {
      const Streamline s = integrate_streamline(p.q, c.seeds[i], c.step, c.t_max);
      survey.seeds[i] = {c.seeds[i], classify_streamline(s, p.cell, cp)};
    });
    for (const auto& r : survey.seeds)
      if (r.classification.period_vector) {
        const Vec2 a = canonical_lattice_vector(*r.classification.period_vector);
        if (survey.period_vector && std::abs(a.x() * survey.period_vector->y() - a.y() * survey.period_vector->x()) >
                                        1e-9 * a.norm() * survey.period_vector->norm())
          survey.consistency_violation = true;
        if (!survey.period_vector || a.norm() < survey.period_vector->norm()) survey.period_vector = a;
      }
  }
  CsvFile f(out / "trajectories.csv", "seed_x,seed_y,tag,a_x,a_y,return_time");
  for (const auto& r : survey.seeds) {
    const auto& k = r.classification;
    const std::string ax = k.period_vector ? num(k.period_vector->x()) : "";
    const std::string ay = k.period_vector ? num(k.period_vector->y()) : "";
    const std::string rt = k.return_time ? num(*k.return_time) : "";
    f.row(r.seed.x(), r.seed.y(), tag_name(k.tag), ax, ay, rt);
  }
  rep.outputs.push_back(f.path().string());
  auto& v = rep.verdicts;
  for (auto t : {TrajectoryTag::Stagnation, TrajectoryTag::Closed, TrajectoryTag::UnboundedPeriodic,
                 TrajectoryTag::UnboundedNonPeriodic, TrajectoryTag::Undetermined})
    v["count_" + tag_name(t)] = survey.count(t);
  v["period_vector"] = survey.period_vector ? nlohmann::ordered_json::array({survey.period_vector->x(),
                                                                              survey.period_vector->y()})
                                            : nlohmann::ordered_json();
  v["consistency_violation"] = survey.consistency_violation;
}

inline void cmd_kernel(const RunConfig& c, const Problem& p, const std::filesystem::path& out, RunReport& rep) {
  const KernelBasis kb = kernel_basis(advection_constraint_operator(p.q), c.kernel);
  CsvFile f(out / "kernel.csv", "index,singular_value,moment_x,moment_y");
  const Eigen::VectorXd w = p.cell.weights();
  for (int k = 0; k < kb.dim(); ++k) {
    // moments of the unit-mass element w^2 / int w^2
    const ScalarField el = kb.element(k);
    const double mass = w.dot(el.values().cwiseAbs2());
    const Vec2 m = drift_moment(p.q, el) / mass;
    f.row(k, kb.singular_values[k], m.x(), m.y());
  }
  rep.outputs.push_back(f.path().string());
  rep.verdicts["kernel_dim"] = kb.dim();
  rep.verdicts["resolved_dim"] = kb.resolved_dim;
  rep.verdicts["sigma_max"] = kb.sigma_max;
  rep.verdicts["first_rejected"] = kb.first_rejected;
  rep.verdicts["spectral_gap"] = kb.spectral_gap;
}

inline void cmd_limit_speed(const RunConfig& c, const Problem& p, const std::filesystem::path& out,
                            RunReport& rep) {
  const KernelBasis kb = kernel_basis(advection_constraint_operator(p.q), c.kernel);
  std::vector<std::optional<LimitSpeedResult>> res(p.directions.size());
  parallel_for(res.size(), [&](std::size_t i) { res[i] = limit_speed(p.A, p.q, p.reaction.zeta(), p.directions[i], kb); });
  CsvFile f(out / "limit_speed.csv", "e_x,e_y,value,constraint_active,mu,kernel_dim");
  auto values = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < res.size(); ++i) {
    const Vec2 e = p.directions[i].vec();
    f.row(e.x(), e.y(), res[i]->value, res[i]->constraint_active, res[i]->multiplier, res[i]->kernel_dim);
    values.push_back(res[i]->value);
  }
  rep.outputs.push_back(f.path().string());
  if (c.dump_maximizer) {
    CsvFile w(out / "limit_speed_maximizer.csv", "direction,x,y,w");
    for (std::size_t d = 0; d < res.size(); ++d)
      for (int j = 0; j < p.cell.ny(); ++j)
        for (int i = 0; i < p.cell.nx(); ++i)
          w.row(static_cast<int>(d), p.cell.x(i), p.cell.y(j), res[d]->maximizer.values()[p.cell.index(i, j)]);
    rep.outputs.push_back(w.path().string());
  }
  rep.verdicts["values"] = values;
  rep.verdicts["kernel_dim"] = kb.dim();
}

inline void cmd_min_speed(const RunConfig& c, const Problem& p, const std::filesystem::path& out,
                          RunReport& rep) {
  const SpeedResult s = minimal_speed(p.A, c.M, p.q, p.reaction.zeta(), p.e, c.search);
  CsvFile f(out / "min_speed.csv", "lambda,k,ratio");
  for (const auto& pt : s.curve) f.row(pt.lambda, pt.k, pt.ratio);
  rep.outputs.push_back(f.path().string());
  rep.verdicts["c_star"] = s.c_star;
  rep.verdicts["lambda_star"] = s.lambda_star;
  rep.verdicts["upwind_fallback"] = s.upwind_fallback;
}

// returns false when a row failed
inline bool cmd_converge(const RunConfig& c, const Problem& p, const std::filesystem::path& out, RunReport& rep,
                         std::ostream& os, std::ostream& err) {
  ConvergenceParams cp;
  cp.search = c.search;
  cp.kernel = c.kernel;
  cp.final_gap_fraction = c.final_gap_fraction;
  cp.zero_limit_fraction = c.zero_limit_fraction;
  const ConvergenceReport r = convergence_study(p.A, p.q, p.reaction.zeta(), p.e, c.M_list, cp);
  CsvFile f(out / "converge.csv", "M,speed_over_M,gap");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  bool all_ok = true;
  for (const auto& row : r.rows) {
    f.row(row.M, row.ok ? row.speed_over_M : nan, row.ok ? row.gap : nan);
    if (!row.ok) {
      all_ok = false;
      err << "converge: row M=" << num(row.M) << " failed: " << row.error << '\n';
    }
  }
  const std::string verdict = "limit=" + num(r.limit.value) + " bound=" + num(r.bound) +
                              " bounded=" + (r.bounded ? "true" : "false") +
                              " gaps_nonincreasing=" + (r.gaps_nonincreasing ? "true" : "false") +
                              " final_gap=" + num(r.rows.back().gap) + " threshold=" + num(r.final_gap_threshold) +
                              " final_gap_ok=" + (r.final_gap_ok ? "true" : "false");
  std::ofstream(out / "converge_verdict.txt", std::ios::binary) << verdict << '\n';
  os << verdict << '\n';
  rep.outputs.push_back(f.path().string());
  rep.outputs.push_back((out / "converge_verdict.txt").string());
  rep.verdicts["limit"] = r.limit.value;
  rep.verdicts["bound"] = r.bound;
  rep.verdicts["bounded"] = r.bounded;
  rep.verdicts["gaps_nonincreasing"] = r.gaps_nonincreasing;
  rep.verdicts["final_gap_threshold"] = r.final_gap_threshold;
  rep.verdicts["final_gap_ok"] = r.final_gap_ok;
  return all_ok;
}

}  // namespace detail

// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Minimal KPP front speeds in periodic drifts"};
  app.set_version_flag("--version", std::string(KPP_DRIFT_VERSION));
  app.require_subcommand(1, 1);
  std::string config_path, out_dir = ".";
  std::vector<std::string> overrides;
  for (const auto& name : commands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config,-c", config_path, "TOML run configuration")->required();
    sub->add_option("--out,-o", out_dir, "output directory");
    sub->add_option("--set", overrides, "override a field, e.g. --set cell.n1=128")->take_all();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    os << o.str();
    err << er.str();
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const auto t0 = std::chrono::steady_clock::now();

  try {
    toml::table root;
    try {
      root = toml::parse_file(config_path);
    } catch (const toml::parse_error& e) {
      const auto& b = e.source().begin;
      err << "error: " << config_path << ":" << b.line << ":" << b.column << ": " << e.description() << '\n';
      return 1;
    }
    for (const auto& s : overrides) detail::apply_override(root, s);
    const RunConfig cfg = parse_config(std::move(root));
    const Problem prob = validate(cfg, command);

    if (command == "check-flow" && !prob.admissibility.passed) {
      err << "error: flow '" << cfg.flow.name << "' is not admissible\n";
      for (const auto& v : prob.admissibility.violations) err << "  " << v << '\n';
      return 1;
    }

    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    RunReport rep;
    rep.command = command;
    rep.config = cfg.echo;
    bool ok = true;
    if (command == "check-flow") detail::cmd_check_flow(prob, out, rep);
    else if (command == "stream") detail::cmd_stream(cfg, prob, out, rep);
    else if (command == "trajectories") detail::cmd_trajectories(cfg, prob, out, rep);
    else if (command == "kernel") detail::cmd_kernel(cfg, prob, out, rep);
    else if (command == "limit-speed") detail::cmd_limit_speed(cfg, prob, out, rep);
    else if (command == "min-speed") detail::cmd_min_speed(cfg, prob, out, rep);
    else ok = detail::cmd_converge(cfg, prob, out, rep, os, err);
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    os << rep.json() << '\n';
    return ok ? 0 : 2;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    if (!e.diagnostics().empty()) err << e.diagnostics();
    return 2;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace kpp::cli
