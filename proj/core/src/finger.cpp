#include "linkfold/finger.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace linkfold::finger {
namespace {

using mech::MechanismGraph;
using mech::MechanismState;
using mech::PivotRef;

constexpr double kTouch = 1e-6;       // mm, contact flag threshold
constexpr double kPenetration = 1e-3; // mm, allowed overlap
constexpr double kAngleEps = 1e-9;    // deg

MechanismGraph graph_with(const FingerParams& p, const char* second, const std::string& joint) {
  return p.mechanism.with_drivers({{kActuator, p.actuator_joint}, {second, joint}});
}

void check_range(const FingerParams& p, double pip, double dip) {
  if (!(pip >= -kAngleEps && pip <= p.pip_max_deg + kAngleEps))
    throw DomainError("PIP angle " + std::to_string(pip) + " deg outside [0, " + std::to_string(p.pip_max_deg) + "]");
  if (!(dip >= -kAngleEps && dip <= p.dip_max_deg + kAngleEps))
    throw DomainError("DIP angle " + std::to_string(dip) + " deg outside [0, " + std::to_string(p.dip_max_deg) + "]");
}

void check_stroke(const FingerParams& p, double actuator) {
  if (!(actuator >= p.stroke_min_deg - kAngleEps && actuator <= p.stroke_max_deg + kAngleEps))
    throw DomainError("actuator angle " + std::to_string(actuator) + " deg outside stroke [" +
                      std::to_string(p.stroke_min_deg) + ", " + std::to_string(p.stroke_max_deg) + "]");
}

// Closest distance between two segments (zero when they cross).
double segment_distance(const Segment& s, const Segment& t) {
  const Vec2 d1 = s.direction(), d2 = t.direction();
  const double den = cross(d1, d2);
  if (std::abs(den) > 1e-15) {
    const Vec2 w = t.a - s.a;
    const double u = cross(w, d2) / den, v = cross(w, d1) / den;
    if (u >= 0 && u <= 1 && v >= 0 && v <= 1) return 0.0;
  }
  return std::min({point_segment_distance(s.a, t), point_segment_distance(s.b, t), point_segment_distance(t.a, s),
                   point_segment_distance(t.b, s)});
}

bool inside_convex(const std::vector<Vec2>& poly, Vec2 p) {
  for (std::size_t i = 0; i < poly.size(); ++i)
    if (cross(poly[(i + 1) % poly.size()] - poly[i], p - poly[i]) < 0.0) return false;
  return true;
}

// Brackets the crossing of a function that is positive at lo and
// non-positive at hi.
std::pair<double, double> bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 60 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return {lo, hi};
}

}  // namespace

const char* phalanx_name(Phalanx p) {
  switch (p) {
    case Phalanx::proximal: return "proximal";
    case Phalanx::intermediate: return "intermediate";
    case Phalanx::distal: return "distal";
  }
  return "?";
}

const char* termination_name(GraspTermination t) {
  switch (t) {
    case GraspTermination::all_contacts: return "all_contacts";
    case GraspTermination::torque_limit: return "torque_limit";
    case GraspTermination::joint_limit: return "joint_limit";
    case GraspTermination::stroke_end: return "stroke_end";
  }
  return "?";
}

double FingerParams::length(Phalanx p) const {
  switch (p) {
    case Phalanx::proximal: return proximal_length;
    case Phalanx::intermediate: return intermediate_length;
    case Phalanx::distal: return distal_length;
  }
  return 0.0;
}

void validate(const FingerParams& p) {
  if (!(p.proximal_length > 0)) throw ValidationError("must be positive", "finger.proximal_length");
  if (!(p.intermediate_length > 0)) throw ValidationError("must be positive", "finger.intermediate_length");
  if (!(p.distal_length > 0)) throw ValidationError("must be positive", "finger.distal_length");
  if (!(p.pad_width > 0)) throw ValidationError("must be positive", "finger.pad_width");
  if (!(p.shell_depth > 0)) throw ValidationError("must be positive", "finger.shell_depth");
  if (!(p.spring.stiffness > 0)) throw ValidationError("must be positive", "finger.spring.stiffness");
  if (!(p.stroke_max_deg > p.stroke_min_deg)) throw ValidationError("empty stroke", "finger.stroke");
  for (const auto* j : {&p.actuator_joint, &p.pip_joint, &p.dip_joint})
    if (!p.mechanism.has_joint(*j)) throw ValidationError("unknown joint '" + *j + "'", "finger.joints");
  for (const auto* l : {&p.proximal_link, &p.intermediate_link, &p.distal_link})
    if (!p.mechanism.has_link(*l)) throw ValidationError("unknown link '" + *l + "'", "finger.links");
  const auto& d = p.mechanism.drivers();
  if (d.size() != 2 || d[0].name != kActuator || d[0].joint != p.actuator_joint || d[1].name != kDip ||
      d[1].joint != p.dip_joint)
    throw ValidationError("mechanism drivers must be (actuator, dip)", "finger.mechanism.drivers");
  for (const auto& [label, ref] : p.labels)
    if (!p.mechanism.has_link(ref.link) || !p.mechanism.links()[p.mechanism.link_index(ref.link)].find(ref.pivot))
      throw ValidationError("label does not resolve to a pivot", "finger.labels." + label);
}

// ---------------------------------------------------------------------------

MechanismGraph build_gellink_mechanism(const LinkageGeometry& g, double lp, double li, double ld) {
  using mech::LinkBody;
  const Vec2 O{0, 0}, A{lp, 0}, B{lp + li, 0}, T{lp + li + ld, 0};
  std::vector<LinkBody> links{
      {"proximal", {{"O", O}, {"A", A}, {"F", g.F}, {"G", g.G}}, true, {}},
      {"actuation_bar", {{"F", g.F}, {"E", g.E}}, false, {}},
      {"ternary", {{"E", g.E}, {"G'", g.Gp}, {"D", g.D}}, false, {}},
      {"bar_gg", {{"G", g.G}, {"G'", g.Gp}}, false, {}},
      {"bar_dc", {{"D", g.D}, {"C", g.C}}, false, {}},
      {"intermediate", {{"A", A}, {"B", B}}, false, {}},
      {"distal", {{"B", B}, {"C", g.C}, {"T'", T}}, false, {}},
  };
  auto joints = [](bool flip) {
    std::vector<mech::RevoluteJoint> j{
        flip ? mech::RevoluteJoint{"F", {"actuation_bar", "F"}, {"proximal", "F"}}
             : mech::RevoluteJoint{"F", {"proximal", "F"}, {"actuation_bar", "F"}},
        {"E", {"actuation_bar", "E"}, {"ternary", "E"}},
        {"G", {"proximal", "G"}, {"bar_gg", "G"}},
        {"G'", {"bar_gg", "G'"}, {"ternary", "G'"}},
        {"D", {"ternary", "D"}, {"bar_dc", "D"}},
        {"C", {"bar_dc", "C"}, {"distal", "C"}},
        {"A", {"proximal", "A"}, {"intermediate", "A"}},
        {"B", {"intermediate", "B"}, {"distal", "B"}},
    };
    return j;
  };
  auto sign_of = [](Vec2 a, Vec2 b, Vec2 c) { return cross(b - a, c - a) > 0 ? 1 : -1; };
  std::vector<mech::BranchFlag> flags{
      {{PivotRef{"ternary", "E"}, PivotRef{"ternary", "G'"}, PivotRef{"proximal", "G"}}, sign_of(g.E, g.Gp, g.G)},
      {{PivotRef{"intermediate", "A"}, PivotRef{"bar_dc", "C"}, PivotRef{"bar_dc", "D"}}, sign_of(A, g.C, g.D)},
  };
  std::vector<mech::TransmissionPair> monitored{
      {"G'", {"bar_gg", "G"}, {"ternary", "E"}},
      {"C", {"bar_dc", "D"}, {"distal", "B"}},
      {"D", {"ternary", "E"}, {"bar_dc", "C"}},
  };
  std::vector<mech::Driver> drivers{{kActuator, "F"}, {kDip, "B"}};
  MechanismGraph m(links, joints(false), drivers, flags, monitored);
  // Orient the actuator so that a positive input flexes the PIP joint.
  const auto ref = mech::reference_state(m);
  const auto kd = mech::kinematic_derivatives(m, ref, {{kActuator, 1.0}});
  if (kd.omega(m, "intermediate") < 0.0) m = MechanismGraph(links, joints(true), drivers, flags, monitored);
  return m;
}

LinkageGeometry linkage_geometry(const FingerParams& p) {
  const auto& m = p.mechanism;
  auto at = [&](const char* link, const char* pivot) { return m.pivot_local({link, pivot}); };
  return {at("proximal", "F"), at("ternary", "E"), at("proximal", "G"),
          at("ternary", "G'"), at("ternary", "D"), at("distal", "C")};
}

FingerParams make_finger(const LinkageGeometry& g, const FingerParams& base) {
  FingerParams p = base;
  p.mechanism = build_gellink_mechanism(g, p.proximal_length, p.intermediate_length, p.distal_length);
  p.actuator_joint = "F";
  p.pip_joint = "A";
  p.dip_joint = "B";
  p.labels = {{"O", {"proximal", "O"}},  {"A", {"proximal", "A"}},  {"B", {"intermediate", "B"}},
              {"C", {"distal", "C"}},    {"D", {"ternary", "D"}},   {"E", {"ternary", "E"}},
              {"F", {"proximal", "F"}},  {"G", {"proximal", "G"}},  {"G'", {"ternary", "G'"}},
              {"T'", {"distal", "T'"}}};
  p.stroke_min_deg = 0.0;
  p.stroke_max_deg = 1.0;  // placeholder so the solvers accept the stroke below
  p.stroke_max_deg = full_stroke_deg(p);
  return p;
}

FingerParams default_gellink() {
  // Produced by optimize_linkage on the default design space (seed 1, budget 5000).
  static const LinkageGeometry g{
      {19.21254375, 3.8930875},     {36.9235, -11.9783},        {27.7171, 9.65155},
      {28.83785, -7.5035},          {66.67789375, -19.847553125}, {67.9064375, -6.86149375},
  };
  return make_finger(g);
}

// ---------------------------------------------------------------------------

PhalanxPoses forward_kinematics(const FingerParams& p, double pip_deg, double dip_deg) {
  check_range(p, pip_deg, dip_deg);
  const double pip = deg2rad(pip_deg), dip = deg2rad(dip_deg);
  PhalanxPoses out;
  out.frames[0] = Pose2{{0, 0}, 0.0};
  out.frames[1] = Pose2{{p.proximal_length, 0}, pip};
  out.frames[2] = Pose2{out.frames[1].apply({p.intermediate_length, 0}), pip + dip};
  out.pads[0] = {out.frames[0].position, out.frames[1].position};
  out.pads[1] = {out.frames[1].position, out.frames[2].position};
  out.pads[2] = {out.frames[2].position, out.frames[2].apply({p.distal_length, 0})};
  return out;
}

PhalanxPoses forward_kinematics(const FingerParams& p, const FingerConfig& c) {
  return forward_kinematics(p, c.pip_deg, c.dip_deg);
}

std::vector<Segment> shell_segments(const FingerParams& p, const PhalanxPoses& poses) {
  const double H = p.shell_depth;
  const auto& f = poses.frames;
  const double lp = p.proximal_length, li = p.intermediate_length, ld = p.distal_length;
  std::vector<Segment> s{
      {f[0].apply({0, -H}), f[0].apply({lp, -H})},
      {f[0].apply({0, 0}), f[0].apply({0, -H})},
      {f[1].apply({0, -H}), f[1].apply({li, -H})},
      {f[2].apply({0, -H}), f[2].apply({ld, -H})},
      {f[2].apply({ld, 0}), f[2].apply({ld, -H})},
      {f[0].apply({lp, -H}), f[1].apply({0, -H})},
      {f[1].apply({li, -H}), f[2].apply({0, -H})},
  };
  std::erase_if(s, [](const Segment& g) { return g.length() < 1e-9; });
  return s;
}

// ---------------------------------------------------------------------------

FingerConfig config_from_state(const FingerParams& p, const MechanismState& s) {
  const auto& m = p.mechanism;
  const auto& ja = m.joints()[m.joint_index(p.actuator_joint)];
  FingerConfig c;
  c.actuator_deg = rad2deg(wrap_angle(s.pose(m, ja.b.link).angle - s.pose(m, ja.a.link).angle));
  c.pip_deg = rad2deg(wrap_angle(s.pose(m, p.intermediate_link).angle - s.pose(m, p.proximal_link).angle));
  c.dip_deg = rad2deg(wrap_angle(s.pose(m, p.distal_link).angle - s.pose(m, p.intermediate_link).angle));
  return c;
}

FingerSolution solve_actuated(const FingerParams& p, double actuator_deg, double dip_deg, const MechanismState* warm) {
  FingerSolution s;
  s.state = mech::solve_position(p.mechanism, {{kActuator, deg2rad(actuator_deg)}, {kDip, deg2rad(dip_deg)}}, warm);
  s.config = config_from_state(p, s.state);
  return s;
}

FingerSolution solve_pip_locked(const FingerParams& p, double actuator_deg, double pip_deg, const MechanismState* warm) {
  const auto g = graph_with(p, kPip, p.pip_joint);
  FingerSolution s;
  s.state = mech::solve_position(g, {{kActuator, deg2rad(actuator_deg)}, {kPip, deg2rad(pip_deg)}}, warm);
  s.config = config_from_state(p, s.state);
  return s;
}

FingerSolution solve_joints(const FingerParams& p, double pip_deg, double dip_deg, const MechanismState* warm) {
  const auto g = p.mechanism.with_drivers({{kPip, p.pip_joint}, {kDip, p.dip_joint}});
  FingerSolution s;
  s.state = mech::solve_position(g, {{kPip, deg2rad(pip_deg)}, {kDip, deg2rad(dip_deg)}}, warm);
  s.config = config_from_state(p, s.state);
  return s;
}

double full_stroke_deg(const FingerParams& p) {
  return solve_joints(p, p.pip_max_deg, p.dip_max_deg).config.actuator_deg;
}

FingerSolution free_motion_solution(const FingerParams& p, double actuator_deg, const MechanismState* warm) {
  check_stroke(p, actuator_deg);
  auto s = solve_actuated(p, actuator_deg, p.spring.rest_deg, warm);
  if (s.config.pip_deg > p.pip_max_deg) s = solve_pip_locked(p, actuator_deg, p.pip_max_deg, &s.state);
  return s;
}

FingerConfig free_motion(const FingerParams& p, double actuator_deg) { return free_motion_solution(p, actuator_deg).config; }

// ---------------------------------------------------------------------------

GraspObject GraspObject::circle(Vec2 center, double radius) {
  GraspObject o;
  o.shape = Shape::circle;
  o.center = center;
  o.radius = radius;
  return o;
}

GraspObject GraspObject::polygon(std::vector<Vec2> vertices) {
  GraspObject o;
  o.shape = Shape::polygon;
  o.vertices = std::move(vertices);
  return o;
}

void validate(const GraspObject& o) {
  if (o.shape == GraspObject::Shape::circle) {
    if (!(o.radius > 0) || !is_finite(o.center)) throw ValidationError("circle needs finite center and radius > 0", "object");
    return;
  }
  const auto& v = o.vertices;
  if (v.size() < 3) throw ValidationError("polygon needs at least 3 vertices", "object.vertices");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double c = cross(v[(i + 1) % v.size()] - v[i], v[(i + 2) % v.size()] - v[(i + 1) % v.size()]);
    if (!(c > 0)) throw ValidationError("polygon must be convex and counterclockwise", "object.vertices");
  }
}

double signed_distance(const GraspObject& o, const Segment& s) {
  if (o.shape == GraspObject::Shape::circle) return point_segment_distance(o.center, s) - o.radius;
  const auto& v = o.vertices;
  double d = std::numeric_limits<double>::infinity();
  bool hit = inside_convex(v, s.a) || inside_convex(v, s.b);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double e = segment_distance(s, {v[i], v[(i + 1) % v.size()]});
    if (e == 0.0) hit = true;
    d = std::min(d, e);
  }
  if (!hit) return d;
  // Overlap: penetration depth is the smallest push along a separating axis.
  double best = std::numeric_limits<double>::infinity();
  auto axis_overlap = [&](Vec2 n) {
    n = normalized(n);
    double pmin = 1e300, pmax = -1e300;
    for (auto q : v) pmin = std::min(pmin, dot(q, n)), pmax = std::max(pmax, dot(q, n));
    const double smin = std::min(dot(s.a, n), dot(s.b, n)), smax = std::max(dot(s.a, n), dot(s.b, n));
    return std::min(pmax - smin, smax - pmin);
  };
  for (std::size_t i = 0; i < v.size(); ++i) best = std::min(best, axis_overlap(perp(v[(i + 1) % v.size()] - v[i])));
  best = std::min(best, axis_overlap(perp(s.direction())));
  return -best;
}

GraspTrace simulate_grasp(const FingerParams& p, const GraspObject& object, const GraspOptions& opt) {
  validate(object);
  if (!(opt.step_deg > 0)) throw ValidationError("step must be positive", "step_deg");
  if (!(opt.torque_limit > 0)) throw ValidationError("torque limit must be positive", "torque_limit");

  const auto locked = graph_with(p, kPip, p.pip_joint);
  const double k = p.spring.stiffness;
  GraspTrace trace;

  auto clearances = [&](const FingerConfig& c) {
    const auto fk = forward_kinematics(p, c);
    std::array<double, 3> d{};
    for (std::size_t i = 0; i < 3; ++i) d[i] = signed_distance(object, fk.pads[i]);
    return d;
  };
  // Actuator torque balancing the deflected spring with PIP held.
  auto torque_of = [&](const FingerSolution& s) {
    const double defl = deg2rad(s.config.dip_deg - p.spring.rest_deg);
    if (std::abs(defl) < 1e-15) return 0.0;
    const auto kd = mech::kinematic_derivatives(locked, s.state, {{kActuator, 1.0}, {kPip, 0.0}});
    const double ddip = kd.omega(locked, p.distal_link) - kd.omega(locked, p.intermediate_link);
    return k * defl * ddip;
  };

  bool pip_locked = false;
  double pip_hold = 0.0;
  bool done = false;
  FingerSolution cur = solve_actuated(p, p.stroke_min_deg, p.spring.rest_deg);
  double torque = 0.0;

  auto record = [&](const FingerSolution& s, const std::array<double, 3>& d) {
    GraspStep st;
    st.actuator_deg = s.config.actuator_deg;
    st.pip_deg = s.config.pip_deg;
    st.dip_deg = s.config.dip_deg;
    st.torque = torque;
    st.min_clearance = *std::min_element(d.begin(), d.end());
    for (std::size_t i = 0; i < 3; ++i) {
      st.contact[i] = trace.contacts[i];
    }
    trace.steps.push_back(st);
  };
  auto touch = [&](const std::array<double, 3>& d, std::size_t step, double act) {
    for (std::size_t i = 0; i < 3; ++i)
      if (!trace.contacts[i] && d[i] <= kTouch) {
        trace.contacts[i] = true;
        trace.events.push_back({step, kPhalanges[i], act});
      }
  };

  auto d0 = clearances(cur.config);
  for (double v : d0)
    if (v < -kPenetration) throw ValidationError("object overlaps the finger at the start configuration", "object");
  touch(d0, 0, cur.config.actuator_deg);
  if (trace.contacts[1]) pip_locked = true, pip_hold = cur.config.pip_deg;
  if (trace.contacts[2]) done = true, trace.termination = GraspTermination::all_contacts;
  record(cur, d0);

  auto solve_at = [&](double act, const FingerSolution& from) {
    if (pip_locked) return solve_pip_locked(p, act, pip_hold, &from.state);
    return solve_actuated(p, act, p.spring.rest_deg, &from.state);
  };

  auto moving_clearance = [&](const FingerSolution& s) {
    const auto d = clearances(s.config);
    return pip_locked ? d[2] : std::min(d[1], d[2]);
  };

  while (!done) {
    const double act = cur.config.actuator_deg;
    if (act >= p.stroke_max_deg - kAngleEps) {
      trace.termination = GraspTermination::stroke_end;
      break;
    }
    const FingerSolution base = cur;
    FingerSolution nxt = solve_at(std::min(act + opt.step_deg, p.stroke_max_deg), base);
    enum class Stop { none, pip, dip } stop = Stop::none;

    if (!pip_locked && nxt.config.pip_deg > p.pip_max_deg) {
      const auto [lo, hi] = bisect([&](double x) { return p.pip_max_deg - solve_at(x, base).config.pip_deg; }, act,
                                   nxt.config.actuator_deg);
      (void)hi;
      nxt = solve_at(lo, base);
      stop = Stop::pip;
    } else if (pip_locked && nxt.config.dip_deg > p.dip_max_deg) {
      const auto [lo, hi] = bisect([&](double x) { return p.dip_max_deg - solve_at(x, base).config.dip_deg; }, act,
                                   nxt.config.actuator_deg);
      (void)hi;
      nxt = solve_at(lo, base);
      stop = Stop::dip;
    }
    if (moving_clearance(nxt) <= 0.0) {
      const auto [lo, hi] =
          bisect([&](double x) { return moving_clearance(solve_at(x, base)); }, act, nxt.config.actuator_deg);
      (void)lo;
      nxt = solve_at(hi, base);
      stop = Stop::none;
    }
    double t_next = pip_locked ? torque_of(nxt) : 0.0;
    bool torque_stop = false;
    if (t_next > opt.torque_limit) {
      const auto [lo, hi] =
          bisect([&](double x) { return opt.torque_limit - torque_of(solve_at(x, base)); }, act, nxt.config.actuator_deg);
      (void)hi;
      nxt = solve_at(lo, base);
      t_next = torque_of(nxt);
      torque_stop = true;
      stop = Stop::none;
    }

    cur = nxt;
    torque = t_next;
    const auto d = clearances(cur.config);
    touch(d, trace.steps.size(), cur.config.actuator_deg);
    record(cur, d);

    if (stop == Stop::pip) {
      pip_locked = true;
      pip_hold = p.pip_max_deg;
    }
    if (trace.contacts[1] && !pip_locked) {
      pip_locked = true;
      pip_hold = cur.config.pip_deg;
    }
    if (trace.contacts[2]) {
      trace.termination = GraspTermination::all_contacts;
      done = true;
    } else if (torque_stop) {
      trace.termination = GraspTermination::torque_limit;
      done = true;
    } else if (stop == Stop::dip) {
      trace.termination = GraspTermination::joint_limit;
      done = true;
    }
  }

  trace.final_config = cur.config;
  trace.torque = torque;
  trace.unreachable = std::none_of(trace.contacts.begin(), trace.contacts.end(), [](bool b) { return b; });
  return trace;
}

// ---------------------------------------------------------------------------

double estimate_width(const std::array<Segment, 3>& pads) {
  // Centre c and radius r with n_i . c - r = n_i . a_i for the pad-side normals.
  double M[3][4];
  for (std::size_t i = 0; i < 3; ++i) {
    const Vec2 d = pads[i].direction();
    if (norm(d) < 1e-12) throw GeometryError("degenerate pad segment");
    const Vec2 n = perp(normalized(d));
    M[i][0] = n.x;
    M[i][1] = n.y;
    M[i][2] = -1.0;
    M[i][3] = dot(n, pads[i].a);
  }
  auto det3 = [](double a[3][4], int skip) {
    // Determinant of the 3x3 matrix with column `skip` replaced by the right-hand side.
    double m[3][3];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = c == skip ? a[r][3] : a[r][c];
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const double det = det3(M, -1);
  if (std::abs(det) < 1e-12) throw GeometryError("pad lines admit no inscribed circle");
  const double r = det3(M, 2) / det;
  if (!(r > 0.0) || !std::isfinite(r)) throw GeometryError("pad lines face apart; no inscribed circle");
  return 2.0 * r;
}

double estimate_width(const FingerParams& p, const FingerConfig& c) {
  return estimate_width(forward_kinematics(p, c).pads);
}

}  // namespace linkfold::finger
