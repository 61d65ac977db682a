#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "linkfold/error.hpp"
#include "linkfold/perception.hpp"

using namespace linkfold;
using namespace linkfold::perception;

namespace {

const finger::FingerParams& ref() {
  static const auto p = finger::default_gellink();
  return p;
}

Mask fill(int w, int h, auto inside) {
  Mask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside(x + 0.5, y + 0.5)) m.at(x, y) = 255;
  return m;
}

std::set<std::pair<double, double>> as_set(const std::vector<Vec2>& pts) {
  std::set<std::pair<double, double>> s;
  for (auto p : pts) s.insert({p.x, p.y});
  return s;
}

// O(n^3): i is a hull vertex iff some edge (i, j) has every other point strictly on one side.
std::set<std::pair<double, double>> brute_hull(const std::vector<Vec2>& p) {
  std::set<std::pair<double, double>> out;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i == j) continue;
      bool edge = true;
      for (std::size_t k = 0; k < p.size() && edge; ++k)
        if (k != i && k != j && cross(p[j] - p[i], p[k] - p[i]) <= 0) edge = false;
      if (edge) out.insert({p[i].x, p[i].y}), out.insert({p[j].x, p[j].y});
    }
  return out;
}

bool is_convex_ccw(const std::vector<Vec2>& h) {
  // Counterclockwise on screen is clockwise in y-down coordinates: every turn is negative.
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Vec2 a = h[i], b = h[(i + 1) % h.size()], c = h[(i + 2) % h.size()];
    if (cross(b - a, c - b) >= 0) return false;
  }
  return true;
}

double edge_distance(Vec2 p, const std::vector<Vec2>& poly) {
  double d = 1e300;
  for (std::size_t i = 0; i < poly.size(); ++i) d = std::min(d, point_segment_distance(p, {poly[i], poly[(i + 1) % poly.size()]}));
  return d;
}

std::array<Vec2, 4> map_quad(const Homography& h, const std::array<Vec2, 4>& q) {
  return {h.apply(q[0]), h.apply(q[1]), h.apply(q[2]), h.apply(q[3])};
}

}  // namespace

TEST_CASE("thresholding") {
  const auto empty = threshold_global(RasterImage(8, 4, 0));
  CHECK(std::count(empty.data.begin(), empty.data.end(), 255) == 0);
  const auto full = threshold_global(RasterImage(8, 4, 255));
  CHECK(std::count(full.data.begin(), full.data.end(), 255) == 32);
  RasterImage g(2, 1);
  g.data = {99, 100};
  CHECK(threshold_global(g).data == std::vector<std::uint8_t>{0, 255});
  CHECK_THROWS_AS(threshold_global(g, 256), DomainError);
  CHECK_THROWS_AS(RasterImage(0, 5), DomainError);
}

TEST_CASE("contour extraction") {
  SUBCASE("filled rectangle") {
    const int w = 60, h = 35;
    const auto m = fill(200, 100, [&](double x, double y) { return x > 20 && x < 20 + w && y > 10 && y < 10 + h; });
    const auto cs = extract_contours(m);
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].area == static_cast<std::size_t>(w * h));
    CHECK(std::abs(cs[0].perimeter() - 2.0 * (w + h)) <= 8.0);
    CHECK(cs[0].signed_area() > 0);
    CHECK(cs[0].points.front() == Vec2{20, 10});
  }
  SUBCASE("two disjoint squares") {
    const auto m = fill(120, 60, [](double x, double y) {
      return (x > 5 && x < 35 && y > 5 && y < 35) || (x > 60 && x < 100 && y > 10 && y < 50);
    });
    CHECK(extract_contours(m).size() == 2);
  }
  SUBCASE("isolated single pixels are rejected") {
    const auto m = fill(100, 100, [](double x, double y) { return int(x) % 2 == 0 && int(y) % 2 == 0; });
    CHECK(extract_contours(m).empty());
    CHECK(extract_contours(m, 1).size() == 2500);
  }
  SUBCASE("a true checkerboard is one 8-connected component") {
    const auto m = fill(60, 60, [](double x, double y) { return (int(x) + int(y)) % 2 == 0; });
    CHECK(extract_contours(m).size() == 1);
  }
  SUBCASE("outer boundary of a disk is exactly its boundary pixels") {
    const auto m = fill(120, 120, [](double x, double y) { return std::hypot(x - 60, y - 55) < 40; });
    const auto cs = extract_contours(m);
    REQUIRE(cs.size() == 1);
    std::set<std::pair<double, double>> boundary;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.at(x, y) && (!m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1)))
          boundary.insert({double(x), double(y)});
    CHECK(as_set(cs[0].points) == boundary);
    CHECK(cs[0].signed_area() > 0);
    for (std::size_t i = 0; i < cs[0].points.size(); ++i)  // consecutive points are 8-neighbours
      CHECK(distance(cs[0].points[i], cs[0].points[(i + 1) % cs[0].points.size()]) < 1.5);
  }
}

TEST_CASE("convex hull") {
  SUBCASE("square with interior points") {
    std::vector<Vec2> p{{0, 0}, {10, 0}, {10, 10}, {0, 10}, {5, 5}, {2, 7}, {5, 0}};
    const auto h = convex_hull(p);
    CHECK(as_set(h.points) == as_set({{0, 0}, {10, 0}, {10, 10}, {0, 10}}));
    CHECK(h.signed_area() == doctest::Approx(100.0));
    CHECK(as_set(convex_hull(h.points).points) == as_set(h.points));
  }
  SUBCASE("collinear input") {
    CHECK_THROWS_AS(convex_hull(std::vector<Vec2>{{0, 0}, {1, 1}, {2, 2}, {3, 3}}), GeometryError);
    CHECK_THROWS_AS(convex_hull(std::vector<Vec2>{{0, 0}, {1, 1}}), GeometryError);
  }
  SUBCASE("matches the brute-force hull") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(-100, 100);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Vec2> p(50);
      for (auto& q : p) q = {U(rng), U(rng)};
      CHECK(as_set(convex_hull(p).points) == brute_hull(p));
    }
  }
  SUBCASE("ten thousand points: contains all, convex") {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> N(0, 50);
    std::vector<Vec2> p(10000);
    for (auto& q : p) q = {N(rng), N(rng)};
    const auto h = convex_hull(p);
    CHECK(is_convex_ccw(h.points));
    bool inside = true;
    for (auto q : p)
      for (std::size_t i = 0; i < h.points.size() && inside; ++i)
        inside = cross(h.points[(i + 1) % h.points.size()] - h.points[i], q - h.points[i]) <= 1e-9;
    CHECK(inside);
  }
}

TEST_CASE("polygon approximation") {
  SUBCASE("collinear midpoints are removed") {
    std::vector<Vec2> sq{{0, 0}, {0, 25}, {0, 50}, {25, 50}, {50, 50}, {50, 25}, {50, 0}, {25, 0}};
    const auto r = rdp_closed(sq, 2.0);
    CHECK(as_set(r) == as_set({{0, 0}, {0, 50}, {50, 50}, {50, 0}}));
    const auto q = approx_polygon({sq, 0}, 2.0);
    CHECK(as_set({q.vertices.begin(), q.vertices.end()}) == as_set({{0, 0}, {0, 50}, {50, 50}, {50, 0}}));
    CHECK(q.vertices[0] == Vec2{0, 0});  // topmost, then leftmost
    CHECK(q.vertices[1] == Vec2{0, 50});  // counterclockwise on screen
  }
  SUBCASE("rotated square") {
    const Vec2 c{150, 140};
    const double a = deg2rad(27), s = 70;
    std::array<Vec2, 4> corners;
    for (int k = 0; k < 4; ++k) corners[k] = c + rotate(Vec2{k == 0 || k == 3 ? -s : s, k < 2 ? -s : s}, a);
    const auto m = fill(300, 300, [&](double x, double y) {
      const Vec2 l = rotate(Vec2{x, y} - c, -a);
      return std::abs(l.x) < s && std::abs(l.y) < s;
    });
    const auto cs = extract_contours(m);
    REQUIRE(cs.size() == 1);
    const auto q = approx_polygon(convex_hull(cs[0]), 2.0);
    for (auto v : q.vertices) {
      double d = 1e9;
      for (auto t : corners) d = std::min(d, distance(v + Vec2{0.5, 0.5}, t));
      CHECK(d <= 1.0);
    }
  }
  SUBCASE("subset and Hausdorff bound") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0, 500);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Vec2> p(200);
      for (auto& q : p) q = {U(rng), U(rng)};
      const auto h = convex_hull(p).points;
      for (double eps : {0.5, 3.0, 20.0}) {
        const auto r = rdp_closed(h, eps);
        const auto hs = as_set(h);
        for (auto v : r) CHECK(hs.count({v.x, v.y}) == 1);
        for (auto v : h) CHECK(edge_distance(v, r) <= eps + 1e-9);
      }
    }
  }
  SUBCASE("a large circle has no stable quadrilateral") {
    const auto m = fill(800, 800, [](double x, double y) { return std::hypot(x - 400, y - 400) < 300; });
    const auto h = convex_hull(extract_contours(m).at(0));
    CHECK_THROWS_AS(approx_polygon(h, 2.0), FeatureError);
  }
  CHECK_THROWS_AS(approx_polygon({{{0, 0}, {1, 0}, {0, 1}}, 0}, 2.0), FeatureError);
}

TEST_CASE("homography") {
  const std::array<Vec2, 4> unit{Vec2{0, 0}, Vec2{0, 1}, Vec2{1, 1}, Vec2{1, 0}};
  SUBCASE("unit square to unit square is the identity") {
    const auto h = fit_homography(unit, 1.0, 1.0);
    const std::array<double, 9> id{1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i) CHECK(h.m[i] == doctest::Approx(id[i]).epsilon(1e-12).scale(1));
  }
  SUBCASE("recovers a constructed warp") {
    Homography w;
    w.m = {1.2, 0.1, 30, -0.05, 0.9, 12, 4e-4, -2e-4, 1};
    const double rw = 320, rh = 240;
    const std::array<Vec2, 4> rect{Vec2{0, 0}, Vec2{0, rh}, Vec2{rw, rh}, Vec2{rw, 0}};
    const auto quad = map_quad(w, rect);
    const auto h = fit_homography(quad, rw, rh);
    const auto inv = w.inverse();
    for (int i = 0; i < 9; ++i) CHECK(h.m[i] == doctest::Approx(inv.m[i]).epsilon(1e-9).scale(1e-9));
    const auto back = map_quad(h, quad);
    for (int i = 0; i < 4; ++i) CHECK(distance(back[i], rect[i]) <= 1e-9);
  }
  SUBCASE("corner residual over random convex quads") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> U(0, 1400), A(0, 2 * kPi);
    int tested = 0;
    double worst = 0;
    while (tested < 2000) {
      std::array<Vec2, 4> q;
      for (auto& p : q) p = {U(rng), U(rng) * 0.75};
      const auto h = convex_hull(std::vector<Vec2>(q.begin(), q.end())).points;
      if (h.size() != 4) continue;
      double min_angle = 180;
      for (std::size_t i = 0; i < 4; ++i)
        min_angle = std::min(min_angle, rad2deg(angle_between(h[(i + 3) % 4] - h[i], h[(i + 1) % 4] - h[i])));
      if (min_angle <= 10) continue;
      const auto cq = canonical_quad({h[0], h[1], h[2], h[3]});
      const double rw = 200 + U(rng) / 4, rh = 100 + U(rng) / 4;
      const auto mapped = map_quad(fit_homography(cq, rw, rh), cq);
      const std::array<Vec2, 4> rect{Vec2{0, 0}, Vec2{0, rh}, Vec2{rw, rh}, Vec2{rw, 0}};
      for (int i = 0; i < 4; ++i) worst = std::max(worst, distance(mapped[i], rect[i]));
      ++tested;
    }
    CHECK(worst <= 1e-6);
  }
  SUBCASE("degenerate quads") {
    CHECK_THROWS_AS(fit_homography({Vec2{0, 0}, Vec2{0, 1}, Vec2{0, 2}, Vec2{1, 0}}, 1, 1), ConditioningError);
    CHECK_THROWS_AS(fit_homography(unit, 0, 1), DomainError);
  }
}

TEST_CASE("unwarp") {
  RasterImage img(40, 30);
  std::mt19937_64 rng(1);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
  SUBCASE("identity copies exactly") { CHECK(unwarp(img, Homography{}, 40, 30) == img); }
  SUBCASE("translation shifts exactly") {
    Homography t;
    t.m[2] = 5;
    const auto out = unwarp(img, t, 40, 30);
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 40; ++x) CHECK(out.at(x, y) == (x < 5 ? 0 : img.at(x - 5, y)));
  }
}

TEST_CASE("rendering") {
  SUBCASE("straight finger shows three pads") {
    const auto img = synth_render(ref(), 0, 0);
    CHECK(img.width == 1440);
    CHECK(img.height == 1080);
    CHECK(extract_contours(threshold_global(img)).size() == 3);
    const auto f = extract_features(img);
    CHECK(f.count() == 3);
    // Pads appear left to right in finger order.
    CHECK(f.quads[0]->vertices[0].x < f.quads[1]->vertices[0].x);
    CHECK(f.quads[1]->vertices[0].x < f.quads[2]->vertices[0].x);
  }
  SUBCASE("column heights follow the path length") {
    RenderOptions o;
    const auto img = synth_render(ref(), 20, 50, {}, o);
    auto tpl = o.scene;
    const auto scene = optics::build_scene(ref(), tpl, 20, 50);
    const auto rep = optics::visibility(scene);
    const double f = 1.0 / scene.camera.pixel_pitch();
    int checked = 0;
    for (int i = 0; i < img.width; i += 37) {
      const auto& px = rep.pixels[static_cast<std::size_t>(i)];
      int lit = 0;
      for (int j = 0; j < img.height; ++j) lit += img.at(i, j) > 0;
      const double len = ref().length(finger::kPhalanges[std::max(px.pad, 0)]);
      if (px.terminal != optics::Terminal::pad || px.t * len < 1 || px.t * len > len - 1) continue;
      CHECK(std::abs(lit - 2 * f * 12 / px.path_length) <= 1.0);
      CHECK(img.at(i, 540) == static_cast<int>(std::lround(200 * std::pow(0.65, px.bounces))));
      ++checked;
    }
    CHECK(checked > 10);
  }
  SUBCASE("null imprints change nothing") {
    CHECK(synth_render(ref(), 40, 20, {{1, 0.5, 4.0, 0.0}}) == synth_render(ref(), 40, 20));
    CHECK_FALSE(synth_render(ref(), 40, 20, {{1, 0.5, 4.0, 30.0}}) == synth_render(ref(), 40, 20));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(synth_render(ref(), 91, 0), DomainError);
    CHECK_THROWS_AS(synth_render(ref(), 0, 0, {{1, 1.5, 4.0, 30.0}}), DomainError);
    CHECK_THROWS_AS(synth_render(ref(), 0, 0, {{3, 0.5, 4.0, 30.0}}), DomainError);
  }
}

TEST_CASE("features are deterministic and translation equivariant") {
  const auto img = synth_render(ref(), 35, 55);
  const auto a = extract_features(img).vertex_vector(), b = extract_features(img).vertex_vector();
  CHECK(a == b);
  const int dx = 7, dy = -5;
  RasterImage shifted(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (x - dx >= 0 && y - dy >= 0 && x - dx < img.width && y - dy < img.height) shifted.at(x, y) = img.at(x - dx, y - dy);
  const auto s = extract_features(shifted).vertex_vector();
  for (std::size_t i = 0; i < 24; ++i) CHECK(s[i] == a[i] + (i % 2 == 0 ? dx : dy));
}

TEST_CASE("difference images and contact") {
  const auto ref_img = synth_render(ref(), 30, 30);
  SUBCASE("identical frames") {
    const auto d = difference_image(ref_img, ref_img);
    CHECK(std::all_of(d.delta.data.begin(), d.delta.data.end(), [](auto v) { return v == 0; }));
    for (const auto& p : d.report.pads) {
      CHECK(p.present);
      CHECK_FALSE(p.contact);
      CHECK(p.mean_abs_delta == 0.0);
    }
  }
  SUBCASE("an imprint on one pad") {
    // 3 mm radius on the 23 x 24 mm intermediate pad covers about 5 percent.
    const auto cur = synth_render(ref(), 30, 30, {{1, 0.5, 3.0, 50.0}});
    const auto d = difference_image(cur, ref_img);
    CHECK(d.report.pads[1].contact);
    const double frac = double(d.report.pads[1].changed) / double(d.report.pads[1].pixels);
    CHECK(frac > 0.03);
    CHECK(frac < 0.07);
    CHECK_FALSE(d.report.pads[0].contact);
    CHECK_FALSE(d.report.pads[2].contact);
    CHECK(d.report.pads[1].mean_abs_delta == doctest::Approx(50.0 * frac).epsilon(1e-9));
  }
  SUBCASE("global drift is not contact") {
    auto drift = ref_img;
    for (auto& v : drift.data) v = static_cast<std::uint8_t>(std::min(255, v + 2));
    const auto d = difference_image(drift, ref_img);
    for (const auto& p : d.report.pads) CHECK_FALSE(p.contact);
  }
  CHECK_THROWS_AS(difference_image(RasterImage(4, 4), RasterImage(4, 5)), DomainError);
}

TEST_CASE("unwarping a pad view restores a round imprint") {
  for (int pad : {0, 1}) {
    CAPTURE(pad);
    const double len = ref().length(finger::kPhalanges[pad]);
    const auto base = synth_render(ref(), 0, 0);
    const auto cur = synth_render(ref(), 0, 0, {{pad, 0.5, 4.0, 60.0}});
    const auto quad = extract_features(base).quads[pad];
    REQUIRE(quad);
    const double k = 10.0;  // px per mm in the rectified view
    // Image columns run along the pad. Edge v0 -> v1 maps to the rectangle's
    // left side, so give that side the pad length when the edge is horizontal.
    const auto& v = quad->vertices;
    const Vec2 e = v[1] - v[0];
    const bool along = std::abs(e.x) > std::abs(e.y);
    const double rw = along ? 24.0 * k : len * k, rh = along ? len * k : 24.0 * k;
    const auto H = fit_homography(v, rw, rh);
    const int W = int(rw), Hh = int(rh);
    const auto a = unwarp(cur, H, W, Hh), b = unwarp(base, H, W, Hh);
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < Hh; ++y)
      for (int x = 0; x < W; ++x)
        if (std::abs(int(a.at(x, y)) - int(b.at(x, y))) >= 30) sx += x, sy += y, n += 1;
    REQUIRE(n > 100);
    const double mx = sx / n, my = sy / n;
    double cxx = 0, cyy = 0, cxy = 0;
    for (int y = 0; y < Hh; ++y)
      for (int x = 0; x < W; ++x)
        if (std::abs(int(a.at(x, y)) - int(b.at(x, y))) >= 30) {
          cxx += (x - mx) * (x - mx), cyy += (y - my) * (y - my), cxy += (x - mx) * (y - my);
        }
    const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
    const double l1 = tr / 2 + std::sqrt(tr * tr / 4 - det), l2 = tr / 2 - std::sqrt(tr * tr / 4 - det);
    CHECK(std::sqrt(l2 / l1) >= 0.9);
    // Columns sample angle uniformly, so a corner-fitted homography fixes
    // shape but leaves the middle of a near, bulging view enlarged.
    CHECK(n > 0.9 * kPi * 40 * 40);
    CHECK(n < 1.4 * kPi * 40 * 40);
  }
}

TEST_CASE("calibration and lookup") {
  SUBCASE("two by two grid") {
    const auto t = build_calibration(ref(), {0.0, 90.0}, {0.0, 90.0});
    CHECK(t.samples.size() == 4);
    CHECK(t.failures() == 0);
    validate(t);
  }
  static const auto t = build_calibration(ref(), 6.0);  // subcases re-enter the test body
  CHECK(t.samples.size() == 16 * 16);
  CHECK(t.failures() == 0);
  CHECK(min_separation(t) > 0.5);

  SUBCASE("grid points are recovered exactly") {
    for (auto [i, j] : {std::pair{0, 0}, {5, 9}, {15, 15}, {12, 3}}) {
      const auto& s = t.sample(i, j);
      const auto e = estimate_joint_angles(t, synth_render(ref(), s.pip_deg, s.dip_deg));
      CHECK(e.pip_deg == s.pip_deg);
      CHECK(e.dip_deg == s.dip_deg);
      CHECK(e.distance == 0.0);
      CHECK(e.confidence == doctest::Approx(1.0));
    }
  }
  SUBCASE("off-grid round trip") {
    const auto e = estimate_joint_angles(t, synth_render(ref(), 30, 40));
    CHECK(std::abs(e.pip_deg - 30) <= 1.0);
    CHECK(std::abs(e.dip_deg - 40) <= 1.0);
  }
  SUBCASE("cell midpoints stay within one grid spacing") {
    for (double a = 3; a < 90; a += 12)
      for (double b = 3; b < 90; b += 12) {
        const auto e = estimate_joint_angles(t, synth_render(ref(), a, b));
        CHECK(std::abs(e.pip_deg - a) <= 6.0);
        CHECK(std::abs(e.dip_deg - b) <= 6.0);
      }
  }
  SUBCASE("a hidden distal pad lowers confidence") {
    RenderOptions o;
    o.scene.mirrors.pop_back();  // the distal mirror is the only view at full DIP flexion
    const auto img = synth_render(ref(), 40, 90, {}, o);
    const auto f = extract_features(img, t.pipeline);
    CHECK(f.count() == 2);
    CHECK_FALSE(f.quads[2]);
    const auto e = estimate_joint_angles(t, img);
    const auto full = estimate_joint_angles(t, synth_render(ref(), 40, 90));
    CHECK(e.pads == 2);
    CHECK(e.confidence < full.confidence);
    CHECK(std::abs(e.pip_deg - 40) <= 3.0);
  }
  SUBCASE("too few features") {
    CHECK_THROWS_AS(estimate_joint_angles(t, RasterImage(1440, 1080)), FeatureError);
  }
  SUBCASE("a pipeline that finds nothing aborts calibration") {
    PipelineOptions p;
    p.min_area = 10'000'000;
    CHECK_THROWS_AS(build_calibration(ref(), 45.0, {}, p), FeatureError);
  }
}
