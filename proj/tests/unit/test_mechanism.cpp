#include <doctest.h>

#include <cmath>
#include <random>

#include "linkfold/mechanism.hpp"

using namespace linkfold;
using namespace linkfold::mech;

namespace {

// Four-bar with ground pivots O2=(0,0), O4=(d,0); crank a, coupler b, rocker c.
// Pivots are stored in world coordinates of the elbow-up assembly at crank0.
MechanismGraph fourbar(double a, double b, double c, double d, double crank0 = 0.0) {
  const Vec2 o2{0, 0}, o4{d, 0};
  const Vec2 B = o2 + a * unit_from_angle(crank0);
  // Independent intersection: C at distance b from B and c from O4, upper branch.
  const Vec2 dv = o4 - B;
  const double L = norm(dv);
  const double x = (b * b - c * c + L * L) / (2 * L);
  const double h = std::sqrt(b * b - x * x);
  const Vec2 u = dv / L;
  const Vec2 C = B + x * u + h * Vec2{-u.y, u.x};
  std::vector<LinkBody> links{
      {"ground", {{"O2", o2}, {"O4", o4}}, true, {}},
      {"crank", {{"O2", o2}, {"B", B}}, false, {}},
      {"coupler", {{"B", B}, {"C", C}}, false, {}},
      {"rocker", {{"C", C}, {"O4", o4}}, false, {}},
  };
  std::vector<RevoluteJoint> joints{
      {"J1", {"ground", "O2"}, {"crank", "O2"}},
      {"J2", {"crank", "B"}, {"coupler", "B"}},
      {"J3", {"coupler", "C"}, {"rocker", "C"}},
      {"J4", {"rocker", "O4"}, {"ground", "O4"}},
  };
  const double s = cross(C - B, o4 - B);
  std::vector<BranchFlag> flags{{{PivotRef{"coupler", "B"}, PivotRef{"rocker", "C"}, PivotRef{"ground", "O4"}},
                                 s > 0 ? 1 : -1}};
  std::vector<TransmissionPair> tp{{"J3", {"coupler", ""}, {"rocker", ""}}};
  return MechanismGraph(links, joints, {{"crank", "J1"}}, flags, tp);
}

double rocker_angle(const MechanismGraph& m, const MechanismState& s) {
  const Vec2 c = s.pivot_world(m, {"rocker", "C"});
  const Vec2 o4 = s.pivot_world(m, {"rocker", "O4"});
  return angle_of(c - o4);
}

}  // namespace

TEST_CASE("mobility counts links and pairs") {
  SUBCASE("single pinned link") {
    MechanismGraph m({{"g", {{"p", {0, 0}}}, true, {}}, {"l", {{"p", {0, 0}}, {"q", {1, 0}}}, false, {}}},
                     {{"j", {"g", "p"}, {"l", "p"}}}, {{"in", "j"}});
    const auto r = mobility(m);
    CHECK(r.links == 2);
    CHECK(r.lower_pairs == 1);
    CHECK(r.higher_pairs == 0);
    CHECK(r.dof == 1);
  }
  SUBCASE("four-bar") { CHECK(mobility(fourbar(1, 3, 3, 3)).dof == 1); }
}

TEST_CASE("structural validation names the field") {
  auto two_grounds = [] {
    MechanismGraph({{"g", {{"p", {0, 0}}}, true, {}}, {"h", {{"p", {0, 0}}}, true, {}}}, {}, {});
  };
  CHECK_THROWS_AS(two_grounds(), ValidationError);
  try {
    MechanismGraph({{"g", {{"p", {0, 0}}}, true, {}}, {"l", {{"p", {0, 0}}}, false, {}}},
                   {{"j", {"g", "p"}, {"l", "nope"}}}, {});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field_path() == "joints[0].b.pivot");
  }
  auto disconnected = [] {
    MechanismGraph({{"g", {{"p", {0, 0}}}, true, {}}, {"l", {{"p", {0, 0}}}, false, {}}}, {}, {});
  };
  CHECK_THROWS_AS(disconnected(), ValidationError);
  auto self_joint = [] {
    MechanismGraph({{"g", {{"p", {0, 0}}, {"q", {1, 0}}}, true, {}}}, {{"j", {"g", "p"}, {"g", "q"}}}, {});
  };
  CHECK_THROWS_AS(self_joint(), ValidationError);
}

TEST_CASE("parallelogram keeps coupler orientation") {
  const auto m = fourbar(2, 2, 2, 2, deg2rad(60));
  const auto s = solve_position(m, {{"crank", deg2rad(30) - deg2rad(60)}});
  // Crank world angle 30 deg; the stored reference already has crank at 60 deg.
  const Vec2 B = s.pivot_world(m, {"crank", "B"});
  CHECK(rad2deg(angle_of(B)) == doctest::Approx(30).epsilon(1e-9));
  const Vec2 C = s.pivot_world(m, {"coupler", "C"});
  CHECK(rad2deg(angle_of(C - B)) == doctest::Approx(0).scale(1).epsilon(1e-9));
  CHECK(rad2deg(rocker_angle(m, s)) == doctest::Approx(30).epsilon(1e-9));
  CHECK(s.residual <= 1e-6);
}

TEST_CASE("crank-rocker matches circle-circle oracle") {
  const auto m = fourbar(1, 3, 3, 3, deg2rad(90));
  const auto s = solve_position(m, {{"crank", deg2rad(-90)}});  // crank at 0 deg
  // Oracle: B=(1,0), O4=(3,0), |BC|=3, |O4C|=3, upper branch.
  const double xb = 1, d = 3;
  const double mid = (xb + d) / 2;  // equal radii: C above the midpoint
  const double h = std::sqrt(9 - (d - mid) * (d - mid));
  const double expect = std::atan2(h, mid - d);
  CHECK(rocker_angle(m, s) == doctest::Approx(expect).epsilon(1e-12));
  const auto t = transmission_angles(m, s, m.monitored());
  const double oracle_tau = rad2deg(angle_between(Vec2{xb - mid, -h}, Vec2{d - mid, -h}));
  CHECK(t[0] == doctest::Approx(oracle_tau).epsilon(1e-9));
}

TEST_CASE("crank-rocker limits match Grashof extremes") {
  const double a = 1, b = 3, c = 3, d = 3;
  const auto m = fourbar(a, b, c, d);
  std::vector<DriverValues> grid;
  for (int k = 0; k <= 360; ++k) grid.push_back({{"crank", deg2rad(k)}});
  const auto res = sweep(m, grid);
  double lo = 1e9, hi = -1e9;
  for (const auto& e : res) {
    REQUIRE(e.feasible);
    const double r = rocker_angle(m, e.state);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  // Rocker extremes occur with crank and coupler collinear.
  const double ext = std::acos((d * d + c * c - (a + b) * (a + b)) / (2 * d * c));
  const double fold = std::acos((d * d + c * c - (b - a) * (b - a)) / (2 * d * c));
  // Interior angle at O4 is pi minus the rocker's world angle.
  CHECK(kPi - lo == doctest::Approx(ext).epsilon(1e-4));
  CHECK(kPi - hi == doctest::Approx(fold).epsilon(1e-4));
}

TEST_CASE("sweep is branch continuous and singleton matches solve") {
  const auto m = fourbar(1, 3, 3, 3);
  const auto one = sweep(m, {{{"crank", 0.3}}});
  const auto direct = solve_position(m, {{"crank", 0.3}});
  REQUIRE(one.size() == 1);
  for (std::size_t k = 0; k < direct.poses.size(); ++k) {
    CHECK(one[0].state.poses[k].position == direct.poses[k].position);
    CHECK(one[0].state.poses[k].angle == direct.poses[k].angle);
  }
  std::vector<DriverValues> grid;
  for (int k = 0; k <= 720; ++k) grid.push_back({{"crank", deg2rad(0.5 * k)}});
  const auto res = sweep(m, grid);
  for (std::size_t i = 1; i < res.size(); ++i)
    for (std::size_t k = 0; k < m.links().size(); ++k)
      CHECK(std::abs(wrap_angle(res[i].state.poses[k].angle - res[i - 1].state.poses[k].angle)) < deg2rad(10));
}

TEST_CASE("non-assemblable input names the loop") {
  // Assembles at crank 0; at 180 deg the far ground pivot is out of reach.
  const auto m = fourbar(1.5, 2, 1, 3);
  try {
    solve_position(m, {{"crank", kPi}});
    FAIL("expected AssemblyError");
  } catch (const AssemblyError& e) {
    CHECK(e.loop().size() == 4);
  }
}

TEST_CASE("dyadic solve agrees with Newton") {
  const auto m = fourbar(1, 3, 3, 3);
  for (double q : {0.2, 1.0, 2.5, -1.2}) {
    const auto n = solve_position(m, {{"crank", q}});
    const auto d = solve_dyadic(m, {{"crank", q}});
    REQUIRE(d);
    for (std::size_t k = 0; k < n.poses.size(); ++k) {
      CHECK(distance(n.poses[k].position, d->poses[k].position) < 1e-9);
      CHECK(std::abs(wrap_angle(n.poses[k].angle - d->poses[k].angle)) < 1e-9);
    }
  }
}

TEST_CASE("derivatives: stationary input and parallelogram") {
  const auto m = fourbar(2, 2, 2, 2, deg2rad(60));
  const auto s = solve_position(m, {{"crank", 0.1}});
  const auto z = kinematic_derivatives(m, s, {{"crank", 0.0}});
  for (double w : z.angular_velocity) CHECK(w == doctest::Approx(0).scale(1));
  const auto k = kinematic_derivatives(m, s, {{"crank", 1.5}});
  CHECK(k.omega(m, "rocker") == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(k.omega(m, "coupler") == doctest::Approx(0).scale(1).epsilon(1e-9));
  CHECK(k.omega(m, "ground") == 0.0);
}

TEST_CASE("derivatives match central finite differences") {
  const auto m = fourbar(1, 3, 3, 3);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-kPi, kPi);
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    const double q = U(rng);
    const auto s = solve_position(m, {{"crank", q}});
    const auto sp = solve_position(m, {{"crank", q + h}}, &s);
    const auto sm = solve_position(m, {{"crank", q - h}}, &s);
    const auto kd = kinematic_derivatives(m, s, {{"crank", 1.0}}, {{"crank", 0.0}});
    for (std::size_t k = 0; k < m.links().size(); ++k) {
      const double fd = wrap_angle(sp.poses[k].angle - sm.poses[k].angle) / (2 * h);
      CHECK(kd.angular_velocity[k] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
    // Acceleration from a second difference of the angular velocity.
    const auto kp = kinematic_derivatives(m, sp, {{"crank", 1.0}});
    const auto km = kinematic_derivatives(m, sm, {{"crank", 1.0}});
    for (std::size_t k = 0; k < m.links().size(); ++k) {
      const double fd = (kp.angular_velocity[k] - km.angular_velocity[k]) / (2 * h);
      CHECK(kd.angular_acceleration[k] == doctest::Approx(fd).epsilon(1e-5).scale(1e-2));
    }
  }
}

TEST_CASE("dead point raises singularity naming a joint") {
  // Coupler and rocker collinear: B=(4,3), C=(4,1), O4=(4,0).
  std::vector<LinkBody> links{
      {"ground", {{"O2", {0, 0}}, {"O4", {4, 0}}}, true, {}},
      {"crank", {{"O2", {0, 0}}, {"B", {4, 3}}}, false, {}},
      {"coupler", {{"B", {4, 3}}, {"C", {4, 1}}}, false, {}},
      {"rocker", {{"C", {4, 1}}, {"O4", {4, 0}}}, false, {}},
  };
  std::vector<RevoluteJoint> joints{
      {"J1", {"ground", "O2"}, {"crank", "O2"}},
      {"J2", {"crank", "B"}, {"coupler", "B"}},
      {"J3", {"coupler", "C"}, {"rocker", "C"}},
      {"J4", {"rocker", "O4"}, {"ground", "O4"}},
  };
  MechanismGraph m(links, joints, {{"crank", "J1"}});
  const auto s = reference_state(m);
  CHECK(s.residual == doctest::Approx(0).scale(1));
  CHECK_THROWS_AS(kinematic_derivatives(m, s, {{"crank", 1.0}}), SingularityError);
}

TEST_CASE("transmission angles: right angle, folded, rigid invariance") {
  MechanismGraph m({{"g", {{"p", {0, 0}}, {"a", {1, 0}}}, true, {}}, {"l", {{"p", {0, 0}}, {"b", {0, 2}}}, false, {}}},
                   {{"j", {"g", "p"}, {"l", "p"}}}, {{"in", "j"}});
  auto s = reference_state(m);
  CHECK(transmission_angles(m, s, {{"j", {"g", "a"}, {"l", "b"}}})[0] == doctest::Approx(90));
  s = solve_position(m, {{"in", -kPi / 2}});
  CHECK(transmission_angles(m, s, {{"j", {"g", "a"}, {"l", "b"}}})[0] == doctest::Approx(0).scale(1).epsilon(1e-9));

  const auto f = fourbar(1, 3, 3, 3);
  auto st = solve_position(f, {{"crank", 0.7}});
  const auto t0 = transmission_angles(f, st, f.monitored());
  const Pose2 g{{5, -2}, 0.9};
  for (auto& p : st.poses) p = g.compose(p);
  const auto t1 = transmission_angles(f, st, f.monitored());
  CHECK(t1[0] == doctest::Approx(t0[0]).epsilon(1e-12));
}

TEST_CASE("solve is bitwise deterministic") {
  const auto m = fourbar(1, 3, 3, 3);
  const auto a = solve_position(m, {{"crank", 1.234}});
  const auto b = solve_position(m, {{"crank", 1.234}});
  for (std::size_t k = 0; k < a.poses.size(); ++k) {
    CHECK(a.poses[k].position == b.poses[k].position);
    CHECK(a.poses[k].angle == b.poses[k].angle);
  }
}
