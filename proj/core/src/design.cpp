#include "linkfold/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "linkfold/error.hpp"
#include "linkfold/parallel.hpp"

namespace linkfold::design {

namespace {

using finger::FingerParams;
using finger::LinkageGeometry;

constexpr double kEps = 1e-9;

void check_bounds(const std::vector<Bounds>& b, std::size_t n, const std::string& path) {
  if (b.size() != n)
    throw ValidationError("expected " + std::to_string(n) + " bounds, got " + std::to_string(b.size()), path);
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!std::isfinite(b[i].lo) || !std::isfinite(b[i].hi) || b[i].lo > b[i].hi)
      throw ValidationError("lower bound exceeds upper bound", path + "[" + std::to_string(i) + "]");
}

void check_start(const std::optional<std::vector<double>>& s, const std::vector<Bounds>& b) {
  if (!s) return;
  if (s->size() != b.size()) throw ValidationError("start has the wrong dimension", "start");
  for (std::size_t i = 0; i < b.size(); ++i)
    if ((*s)[i] < b[i].lo - kEps || (*s)[i] > b[i].hi + kEps)
      throw ValidationError("start lies outside its bounds", "start[" + std::to_string(i) + "]");
}

/// Portable uniform double in [0, 1).
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> axis(double hi, double step) {
  std::vector<double> v;
  const int n = static_cast<int>(std::floor(hi / step + kEps));
  for (int k = 0; k <= n; ++k) v.push_back(k * step);
  if (hi - v.back() > kEps) v.push_back(hi);
  return v;
}

// Starting points of the default spaces: a hand-tuned linkage and the camera
// layout of an earlier optics search round. The shipped reference designs are
// what the optimizers return from here with seed 1, budget 5000.
constexpr double kSeedLinkage[12] = {19.0602, 3.8884, 36.9235, -11.9033, 27.7171, 9.6703,
                                     28.8191, -7.5035, 66.6943, -19.3706, 67.9955, -6.6529};
constexpr double kSeedOptics[11] = {11.316157823181152, -23.260592371368411, 82.08355, 1.5780492475509647,
                                    -13.279954101562499, 35.0, -26.021686454582213, 0.0,
                                    -23.742945312500005, 29.387512499999996, -11.9425};

struct Candidate {
  std::vector<double> x;
  Score s;
};

bool better(const Score& a, std::size_t ia, const Score& b, std::size_t ib) {
  return a.score > b.score || (a.score == b.score && ia < ib);
}

}  // namespace

// --- generic search ----------------------------------------------------------

SearchResult search(const std::vector<Bounds>& bounds, const std::optional<std::vector<double>>& start,
                    std::size_t budget, std::uint64_t seed, const std::function<Score(const std::vector<double>&)>& evaluate,
                    const std::function<bool(double, const std::vector<double>&, const Score&)>& progress) {
  if (budget < 1) throw ValidationError("budget must be at least 1", "budget");
  const std::size_t n = bounds.size();
  std::mt19937_64 rng(seed);
  SearchResult out;
  Candidate inc;
  std::size_t inc_index = 0;

  // Evaluates a batch in parallel; reduction keeps the lowest index on ties.
  auto run_batch = [&](std::vector<std::vector<double>> xs) -> std::optional<Candidate> {
    std::vector<Score> scores(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { scores[i] = evaluate(xs[i]); });
    std::optional<Candidate> best;
    std::size_t bi = 0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (!best || better(scores[i], i, best->s, bi)) {
        best = Candidate{xs[i], scores[i]};
        bi = i;
      }
    out.evaluations += xs.size();
    return best;
  };
  auto report = [&]() {
    if (!progress) return true;
    return progress(std::min(1.0, static_cast<double>(out.evaluations) / static_cast<double>(budget)), inc.x, inc.s);
  };
  auto finish = [&](bool cancelled) {
    out.best = inc.x;
    out.best_score = inc.s;
    out.cancelled = cancelled;
    return out;
  };

  // Global stage.
  const std::size_t n_global = std::clamp<std::size_t>(budget * 3 / 10, 1, budget);
  std::vector<std::vector<double>> pool;
  if (start) pool.push_back(*start);
  const std::size_t n_lhs = n_global - pool.size();
  if (n_lhs > 0) {
    std::vector<std::vector<std::size_t>> perm(n, std::vector<std::size_t>(n_lhs));
    for (auto& p : perm) {
      std::iota(p.begin(), p.end(), 0);
      for (std::size_t i = n_lhs - 1; i > 0; --i)
        std::swap(p[i], p[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1))]);
    }
    for (std::size_t k = 0; k < n_lhs; ++k) {
      std::vector<double> x(n);
      for (std::size_t d = 0; d < n; ++d) {
        const double u = (static_cast<double>(perm[d][k]) + uniform01(rng)) / static_cast<double>(n_lhs);
        x[d] = bounds[d].lo + u * (bounds[d].hi - bounds[d].lo);
      }
      pool.push_back(std::move(x));
    }
  }
  constexpr std::size_t kBatch = 64;
  bool have = false;
  for (std::size_t lo = 0; lo < pool.size(); lo += kBatch) {
    const std::size_t hi = std::min(pool.size(), lo + kBatch);
    auto b = run_batch({pool.begin() + static_cast<long>(lo), pool.begin() + static_cast<long>(hi)});
    if (b && (!have || better(b->s, lo, inc.s, inc_index))) {
      inc = *b;
      inc_index = lo;
      have = true;
    }
    if (!report()) return finish(true);
  }
  out.global_best_score = inc.s.score;

  // Coordinate descent with per-coordinate steps.
  std::vector<double> step(n), floor(n);
  for (std::size_t d = 0; d < n; ++d) {
    const double r = bounds[d].hi - bounds[d].lo;
    step[d] = 0.1 * r;
    floor[d] = 1e-4 * r;
  }
  std::size_t restarts = 0;
  while (out.evaluations < budget) {
    std::vector<std::vector<double>> moves;
    std::vector<std::size_t> dims;
    for (std::size_t d = 0; d < n; ++d) {
      if (step[d] <= floor[d]) continue;
      for (double sgn : {1.0, -1.0}) {
        auto x = inc.x;
        x[d] = std::clamp(x[d] + sgn * step[d], bounds[d].lo, bounds[d].hi);
        if (x[d] == inc.x[d]) continue;
        moves.push_back(std::move(x));
        dims.push_back(d);
      }
    }
    if (moves.empty()) {
      // Converged: restart the pattern around the incumbent with a smaller stencil.
      ++restarts;
      for (std::size_t d = 0; d < n; ++d) step[d] = std::max(0.1 / (1 << std::min<std::size_t>(restarts, 6)), 2e-3) * (bounds[d].hi - bounds[d].lo);
      if (bounds.empty() || std::all_of(bounds.begin(), bounds.end(), [](const Bounds& b) { return b.hi == b.lo; })) break;
      continue;
    }
    const std::size_t room = budget - out.evaluations;
    if (moves.size() > room) {
      moves.resize(room);
      dims.resize(room);
    }
    std::vector<Score> scores(moves.size());
    parallel_for(moves.size(), [&](std::size_t i) { scores[i] = evaluate(moves[i]); });
    out.evaluations += moves.size();
    std::size_t bi = 0;
    for (std::size_t i = 1; i < moves.size(); ++i)
      if (better(scores[i], i, scores[bi], bi)) bi = i;
    if (scores[bi].score > inc.s.score) {
      inc = Candidate{moves[bi], scores[bi]};
      const std::size_t d = dims[bi];
      step[d] = std::min(step[d] * 1.5, 0.25 * (bounds[d].hi - bounds[d].lo));
    } else {
      for (auto& s : step) s *= 0.5;
    }
    if (!report()) return finish(true);
  }
  return finish(false);
}

// --- linkage -------------------------------------------------------------------

std::vector<std::string> linkage_parameter_names() {
  return {"F.x", "F.y", "E.x", "E.y", "G.x", "G.y", "G'.x", "G'.y", "D.x", "D.y", "C.x", "C.y"};
}

std::vector<double> linkage_parameters(const LinkageGeometry& g) {
  return {g.F.x, g.F.y, g.E.x, g.E.y, g.G.x, g.G.y, g.Gp.x, g.Gp.y, g.D.x, g.D.y, g.C.x, g.C.y};
}

LinkageGeometry linkage_from_parameters(const std::vector<double>& x) {
  if (x.size() != 12) throw ValidationError("linkage candidates have 12 coordinates", "parameters");
  return {{x[0], x[1]}, {x[2], x[3]}, {x[4], x[5]}, {x[6], x[7]}, {x[8], x[9]}, {x[10], x[11]}};
}

void validate(const LinkageDesignSpace& s) {
  finger::validate(s.base);
  check_bounds(s.bounds, 12, "bounds");
  check_start(s.start, s.bounds);
  if (!(s.search_step_deg > 0) || !(s.search_row_deg > 0) || !(s.verify_step_deg > 0))
    throw ValidationError("sweep resolutions must be positive", "resolution");
  if (!(s.transmission_min_deg < s.transmission_max_deg))
    throw ValidationError("transmission window is empty", "transmission");
}

LinkageDesignSpace default_linkage_space() {
  LinkageDesignSpace s;
  s.base = finger::default_gellink();
  const std::vector<double> x0(std::begin(kSeedLinkage), std::end(kSeedLinkage));
  for (double v : x0) s.bounds.push_back({v - 6.0, v + 6.0});
  s.start = x0;
  return s;
}

LinkageAudit evaluate_linkage(const LinkageDesignSpace& space, const std::vector<double>& x,
                              std::optional<double> step_opt, std::optional<double> row_opt) {
  const double step = step_opt.value_or(space.verify_step_deg);
  const double row = row_opt.value_or(space.verify_step_deg);
  LinkageAudit a;
  a.min_angle_deg = 180.0;
  a.max_angle_deg = 0.0;
  a.margin_deg = 180.0;
  const auto g = linkage_from_parameters(x);
  const Vec2 pts[] = {g.F, g.E, g.G, g.Gp, g.D, g.C};
  for (const auto& p : pts)
    if (!is_finite(p)) {
      a.failure = "non-finite pivot";
      return a;
    }
  // Bars shorter than a millimetre cannot be built.
  const std::pair<Vec2, Vec2> bars[] = {{g.F, g.E}, {g.E, g.Gp}, {g.Gp, g.D}, {g.E, g.D}, {g.G, g.Gp}, {g.D, g.C}};
  for (const auto& [p, q] : bars)
    if (distance(p, q) < 1.0) {
      a.failure = "degenerate link";
      return a;
    }

  // The stroke limits are not needed here, so skip make_finger's full-flexion solve.
  FingerParams p = space.base;
  try {
    p.mechanism = finger::build_gellink_mechanism(g, p.proximal_length, p.intermediate_length, p.distal_length);
  } catch (const Error& e) {
    a.failure = std::string("assembly: ") + e.what();
    return a;
  }
  a.dof = mech::mobility(p.mechanism).dof;
  if (a.dof != space.dof_target) {
    a.failure = "mobility";
    return a;
  }

  const auto& m = p.mechanism;
  const double pip_max = std::min(space.rom_target_deg, p.pip_max_deg);
  const double dip_max = std::min(space.rom_target_deg, p.dip_max_deg);
  const auto rows = axis(dip_max, row);
  std::map<long, double> prev_row;  // actuator grid index -> PIP on the previous row
  mech::MechanismState row_start = mech::reference_state(m);
  std::optional<mech::MechanismState> row_end;
  bool full = true;
  a.rom_pip_deg = pip_max;
  a.rom_dip_deg = 0.0;
  auto record = [&](const mech::MechanismState& st) {
    for (double t : mech::transmission_angles(m, st, m.monitored())) {
      a.min_angle_deg = std::min(a.min_angle_deg, t);
      a.max_angle_deg = std::max(a.max_angle_deg, t);
    }
  };

  for (std::size_t r = 0; r < rows.size() && full; ++r) {
    const double dip = rows[r];
    double alpha0, alpha1;
    mech::MechanismState s0, s1;
    try {
      auto lo = finger::solve_joints(p, 0.0, dip, &row_start);
      auto hi = finger::solve_joints(p, pip_max, dip, row_end ? &*row_end : &lo.state);
      alpha0 = lo.config.actuator_deg;
      alpha1 = hi.config.actuator_deg;
      s0 = lo.state;
      s1 = hi.state;
    } catch (const Error& e) {
      a.failure = std::string("row endpoints: ") + e.what();
      a.rom_pip_deg = 0.0;
      full = false;
      break;
    }
    if (!(alpha1 > alpha0)) {
      a.failure = "PIP does not increase with the actuator";
      a.rom_pip_deg = 0.0;
      full = false;
      break;
    }
    row_start = s0;
    row_end = s1;
    record(s0);
    std::map<long, double> this_row;
    double last_pip = 0.0;
    mech::MechanismState st = s0;
    const long j0 = static_cast<long>(std::floor(alpha0 / step)) + 1;
    const long j1 = static_cast<long>(std::ceil(alpha1 / step)) - 1;
    for (long j = j0; j <= j1; ++j) {
      const double alpha = static_cast<double>(j) * step;
      try {
        auto sol = mech::solve_dyadic(m, {{finger::kActuator, deg2rad(alpha)}, {finger::kDip, deg2rad(dip)}}, &st);
        if (!sol) throw AssemblyError("linkage is not dyadic under its drivers", {});
        st = *sol;
      } catch (const Error& e) {
        a.failure = std::string("assembly along the stroke: ") + e.what();
        a.rom_pip_deg = std::min(a.rom_pip_deg, last_pip);
        full = false;
        break;
      }
      const double pip = finger::config_from_state(p, st).pip_deg;
      if (!(pip > last_pip)) {
        a.failure = "PIP does not increase with the actuator";
        a.rom_pip_deg = std::min(a.rom_pip_deg, last_pip);
        full = false;
        break;
      }
      if (auto it = prev_row.find(j); it != prev_row.end() && !(pip < it->second)) {
        a.failure = "DIP does not increase with the actuator at locked PIP";
        a.rom_pip_deg = std::min(a.rom_pip_deg, last_pip);
        full = false;
        break;
      }
      last_pip = pip;
      this_row[j] = pip;
      record(st);
    }
    if (!full) break;
    record(s1);
    prev_row = std::move(this_row);
    a.rom_dip_deg = dip;
  }
  a.monotone = full;
  a.margin_deg = std::min(a.min_angle_deg - space.transmission_min_deg, space.transmission_max_deg - a.max_angle_deg);
  a.feasible = full && a.rom_pip_deg >= space.rom_target_deg - kEps && a.rom_dip_deg >= space.rom_target_deg - kEps &&
               a.margin_deg >= 0.0;
  if (full && a.margin_deg < 0.0) a.failure = "transmission angle outside the window";
  return a;
}

namespace {

Score linkage_score(const LinkageAudit& a) {
  if (!a.monotone) return {-1000.0 + a.rom_pip_deg + a.rom_dip_deg, false};
  return {a.margin_deg, a.feasible};
}

DesignResult linkage_result(const LinkageDesignSpace& space, const std::vector<double>& x) {
  const auto a = evaluate_linkage(space, x);
  DesignResult r;
  r.names = linkage_parameter_names();
  r.parameters = x;
  r.objective = a.margin_deg;
  r.feasible = a.feasible;
  r.exhausted = !a.feasible;
  r.audit = {
      {"dof", static_cast<double>(a.dof), a.dof == space.dof_target ? 0.0 : -1.0},
      {"rom_pip_deg", a.rom_pip_deg, a.rom_pip_deg - space.rom_target_deg},
      {"rom_dip_deg", a.rom_dip_deg, a.rom_dip_deg - space.rom_target_deg},
      {"transmission_min_deg", a.min_angle_deg, a.min_angle_deg - space.transmission_min_deg},
      {"transmission_max_deg", a.max_angle_deg, space.transmission_max_deg - a.max_angle_deg},
      {"monotone", a.monotone ? 1.0 : 0.0, a.monotone ? 0.0 : -1.0},
  };
  return r;
}

}  // namespace

DesignResult optimize_linkage(const LinkageDesignSpace& space, std::size_t budget, std::uint64_t seed,
                              const ProgressFn& progress) {
  validate(space);
  auto eval = [&](const std::vector<double>& x) {
    return linkage_score(evaluate_linkage(space, x, space.search_step_deg, space.search_row_deg));
  };
  std::function<bool(double, const std::vector<double>&, const Score&)> cb;
  if (progress)
    cb = [&](double f, const std::vector<double>& x, const Score& s) {
      DesignResult inc;
      inc.names = linkage_parameter_names();
      inc.parameters = x;
      inc.objective = s.score;
      inc.feasible = s.feasible;
      return progress(f, inc);
    };
  const auto sr = search(space.bounds, space.start, budget, seed, eval, cb);
  DesignResult r = linkage_result(space, sr.best);
  r.evaluations = sr.evaluations;
  r.global_best_score = sr.global_best_score;
  r.refined_score = sr.best_score.score;
  r.cancelled = sr.cancelled;
  return r;
}

// --- optics ----------------------------------------------------------------------

std::vector<std::string> optics_parameter_names(const OpticsDesignSpace& s) {
  std::vector<std::string> n{"camera.x", "camera.y", "camera.tilt_deg"};
  for (std::size_t i = 0; i < s.mirror_phalanges.size(); ++i)
    for (const char* c : {"a.x", "a.y", "b.x", "b.y"}) n.push_back("mirrors[" + std::to_string(i) + "]." + c);
  return n;
}

void validate(const OpticsDesignSpace& s) {
  finger::validate(s.finger);
  optics::validate(s.base);
  check_bounds(s.bounds, 3 + 4 * s.mirror_phalanges.size(), "bounds");
  check_start(s.start, s.bounds);
  if (!(s.grid_step_deg > 0)) throw ValidationError("grid step must be positive", "grid_step_deg");
  if (s.search_pixels < 1) throw ValidationError("must be positive", "search_pixels");
}

optics::SceneTemplate optics_template(const OpticsDesignSpace& s, const std::vector<double>& x) {
  if (x.size() != 3 + 4 * s.mirror_phalanges.size()) throw ValidationError("wrong parameter count", "parameters");
  auto t = s.base;
  t.camera_position = {x[0], x[1]};
  t.camera_tilt_deg = x[2];
  t.mirrors.clear();
  for (std::size_t i = 0; i < s.mirror_phalanges.size(); ++i) {
    const double* q = &x[3 + 4 * i];
    t.mirrors.push_back({s.mirror_phalanges[i], {{q[0], q[1]}, {q[2], q[3]}}});
  }
  return t;
}

std::vector<double> optics_parameters(const OpticsDesignSpace& s, const optics::SceneTemplate& t) {
  if (t.mirrors.size() != s.mirror_phalanges.size()) throw ValidationError("mirror count does not match the space", "mirrors");
  std::vector<double> x{t.camera_position.x, t.camera_position.y, t.camera_tilt_deg};
  for (const auto& m : t.mirrors) x.insert(x.end(), {m.local.a.x, m.local.a.y, m.local.b.x, m.local.b.y});
  return x;
}

OpticsDesignSpace default_optics_space(const FingerParams& params) {
  OpticsDesignSpace s;
  s.finger = params;
  s.base = optics::default_scene_template();
  for (const auto& m : s.base.mirrors) s.mirror_phalanges.push_back(m.phalanx);
  const double H = params.shell_depth, li = params.intermediate_length;
  s.bounds = {{0.5, li - 0.5}, {-H + 0.5, -0.5}, {30.0, 150.0}};
  for (auto ph : s.mirror_phalanges) {
    const double L = params.length(ph);
    for (int k = 0; k < 2; ++k) {
      s.bounds.push_back({0.0, L});
      s.bounds.push_back({-H, 0.0});
    }
  }
  std::vector<double> x0(std::begin(kSeedOptics), std::end(kSeedOptics));
  if (x0.size() != s.bounds.size()) x0 = optics_parameters(s, s.base);
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = std::clamp(x0[i], s.bounds[i].lo, s.bounds[i].hi);
  s.start = x0;
  return s;
}

OpticsDesignSpace without_mirrors(const OpticsDesignSpace& s) {
  OpticsDesignSpace o = s;
  o.mirror_phalanges.clear();
  o.bounds.resize(3);
  if (o.start) o.start->resize(3);
  return o;
}

OpticsAudit evaluate_optics(const OpticsDesignSpace& space, const std::vector<double>& x) {
  const auto tpl = optics_template(space, x);
  const auto c = optics::coverage_sweep(space.finger, tpl, optics::square_grid(space.finger, space.grid_step_deg));
  return {c.maximin(), c.min, c.mean, c.feasible};
}

namespace {

/// Search fidelity: the PIP and DIP edges of the grid plus its diagonal, with
/// fewer rays. Each pad's view depends mainly on one joint, so the edges carry
/// the extremes.
optics::ConfigGrid search_grid(const FingerParams& p, double step) {
  optics::ConfigGrid g;
  const auto pa = axis(p.pip_max_deg, step), da = axis(p.dip_max_deg, step);
  for (double a : pa) g.emplace_back(a, 0.0), g.emplace_back(a, p.dip_max_deg);
  for (double b : da)
    if (b > 0.0 && b < p.dip_max_deg) g.emplace_back(0.0, b), g.emplace_back(p.pip_max_deg, b);
  for (std::size_t k = 1; k + 1 < std::min(pa.size(), da.size()); ++k) g.emplace_back(pa[k], da[k]);
  return g;
}

}  // namespace

DesignResult optimize_optics(const OpticsDesignSpace& space, std::size_t budget, std::uint64_t seed,
                             const ProgressFn& progress) {
  validate(space);
  const auto grid = search_grid(space.finger, space.grid_step_deg);
  auto eval = [&](const std::vector<double>& x) {
    auto tpl = optics_template(space, x);
    tpl.pixels = space.search_pixels;
    double worst = 1.0, sum = 0.0;
    for (const auto& [pip, dip] : grid) {
      const auto f = optics::visibility(optics::build_scene(space.finger, tpl, pip, dip), 1).fraction;
      for (double v : f) worst = std::min(worst, v), sum += v;
    }
    const double mean = sum / static_cast<double>(3 * grid.size());
    return Score{worst + 0.01 * mean, worst >= space.target};
  };
  std::function<bool(double, const std::vector<double>&, const Score&)> cb;
  if (progress)
    cb = [&](double f, const std::vector<double>& x, const Score& s) {
      DesignResult inc;
      inc.names = optics_parameter_names(space);
      inc.parameters = x;
      inc.objective = s.score;
      inc.feasible = s.feasible;
      return progress(f, inc);
    };
  const auto sr = search(space.bounds, space.start, budget, seed, eval, cb);
  // The search ranks at reduced fidelity; the start point, when given, is
  // also verified so a good seed is never traded for a worse refinement.
  auto best = sr.best;
  auto a = evaluate_optics(space, best);
  if (space.start && *space.start != best && !sr.cancelled) {
    const auto a0 = evaluate_optics(space, *space.start);
    if (a0.maximin > a.maximin) {
      best = *space.start;
      a = a0;
    }
  }
  DesignResult r;
  r.names = optics_parameter_names(space);
  r.parameters = best;
  r.objective = a.maximin;
  r.feasible = a.maximin >= space.target;
  r.exhausted = !r.feasible;
  static const char* pad[] = {"proximal", "intermediate", "distal"};
  for (int k = 0; k < 3; ++k) r.audit.push_back({std::string("coverage_") + pad[k], a.min[k], a.min[k] - space.target});
  r.evaluations = sr.evaluations;
  r.global_best_score = sr.global_best_score;
  r.refined_score = sr.best_score.score;
  r.cancelled = sr.cancelled;
  return r;
}

}  // namespace linkfold::design
