#include "linkfold/perception.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "linkfold/error.hpp"
#include "linkfold/parallel.hpp"

namespace linkfold::perception {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void check_image(const RasterImage& img, const char* what) {
  if (img.width <= 0 || img.height <= 0 || img.data.size() != static_cast<std::size_t>(img.width) * img.height)
    throw DomainError(std::string(what) + ": image must be non-empty with width*height pixels");
}

}  // namespace

RasterImage::RasterImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw DomainError("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(w) * h, fill);
}

double Contour::perimeter() const {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += distance(points[i], points[(i + 1) % points.size()]);
  return s;
}

double Contour::signed_area() const {
  // y points down, so the shoelace sign is flipped for on-screen orientation.
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += cross(points[i], points[(i + 1) % points.size()]);
  return -0.5 * s;
}

// --- rendering -------------------------------------------------------------------

namespace {

struct Rendered {
  RasterImage image;
  optics::VisibilityReport report;
};

Rendered render(const finger::FingerParams& params, double pip, double dip, const std::vector<Imprint>& imprints,
                const RenderOptions& o, std::size_t threads = 0) {
  if (o.width <= 0 || o.height <= 0) throw ValidationError("must be positive", "render.width/height");
  if (!(o.base >= 0 && o.base <= 255)) throw ValidationError("must lie in [0, 255]", "render.base");
  if (!(o.reflectance > 0 && o.reflectance <= 1)) throw ValidationError("must lie in (0, 1]", "render.reflectance");
  if (!(o.border_mm >= 0)) throw ValidationError("must be non-negative", "render.border_mm");
  for (const auto& im : imprints) {
    if (im.pad < 0 || im.pad > 2) throw DomainError("imprint pad must be 0, 1 or 2");
    if (!(im.t >= 0 && im.t <= 1)) throw DomainError("imprint t must lie in [0, 1]");
    if (!(im.radius_mm >= 0) || !std::isfinite(im.depth)) throw DomainError("imprint radius and depth must be finite");
  }
  auto tpl = o.scene;
  tpl.pixels = o.width;
  const auto scene = optics::build_scene(params, tpl, pip, dip);
  Rendered r{RasterImage(o.width, o.height), optics::visibility(scene, threads)};

  const double f = 1.0 / scene.camera.pixel_pitch();  // px per radian, also used vertically
  const double cy = 0.5 * o.height, half_w = 0.5 * params.pad_width;
  for (int i = 0; i < o.width; ++i) {
    const auto& px = r.report.pixels[static_cast<std::size_t>(i)];
    if (px.terminal != optics::Terminal::pad) continue;
    const double len = params.length(finger::kPhalanges[static_cast<std::size_t>(px.pad)]);
    const double s = px.t * len;
    if (s < o.border_mm || s > len - o.border_mm) continue;
    const double base = o.base * std::pow(o.reflectance, px.bounces);
    const double h = f * half_w / px.path_length;
    const int j0 = std::max(0, static_cast<int>(std::ceil(cy - h - 0.5)));
    const int j1 = std::min(o.height - 1, static_cast<int>(std::floor(cy + h - 0.5)));
    for (int j = j0; j <= j1; ++j) {
      const double z = (j + 0.5 - cy) * px.path_length / f;  // lateral position on the pad, mm
      double depth = 0.0;
      for (const auto& im : imprints) {
        if (im.pad != px.pad) continue;
        const double ds = s - im.t * len;
        if (ds * ds + z * z <= im.radius_mm * im.radius_mm) depth = std::max(depth, im.depth);
      }
      r.image.at(i, j) = to_byte(base - depth);
    }
  }
  return r;
}

}  // namespace

RasterImage synth_render(const finger::FingerParams& params, double pip_deg, double dip_deg,
                         const std::vector<Imprint>& imprints, const RenderOptions& options) {
  return render(params, pip_deg, dip_deg, imprints, options).image;
}

// --- segmentation ------------------------------------------------------------------

Mask threshold_global(const RasterImage& img, int level) {
  check_image(img, "threshold");
  if (level < 0 || level > 255) throw DomainError("threshold level must lie in [0, 255]");
  Mask m(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) m.data[i] = img.data[i] >= level ? 255 : 0;
  return m;
}

namespace {

constexpr int kDx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};  // W NW N NE E SE S SW: clockwise on screen
constexpr int kDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};

struct Component {
  PixelPoint first;  ///< topmost-leftmost pixel
  std::size_t area = 0;
  double cx = 0.0;
};

struct Segmentation {
  std::vector<int> labels;  ///< -1 background
  std::vector<Component> components;
};

Segmentation label_components(const Mask& m) {
  check_image(m, "contours");
  const int w = m.width, h = m.height;
  Segmentation s;
  s.labels.assign(m.data.size(), -1);
  std::vector<int> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int idx = y * w + x;
      if (!m.data[static_cast<std::size_t>(idx)] || s.labels[static_cast<std::size_t>(idx)] >= 0) continue;
      const int id = static_cast<int>(s.components.size());
      Component c{{x, y}, 0, 0.0};
      s.labels[static_cast<std::size_t>(idx)] = id;
      stack.assign(1, idx);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        ++c.area;
        c.cx += px + 0.5;
        for (int k = 0; k < 8; ++k) {
          const int qx = px + kDx[k], qy = py + kDy[k];
          if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
          const auto q = static_cast<std::size_t>(qy * w + qx);
          if (m.data[q] && s.labels[q] < 0) {
            s.labels[q] = id;
            stack.push_back(static_cast<int>(q));
          }
        }
      }
      c.cx /= static_cast<double>(c.area);
      s.components.push_back(c);
    }
  return s;
}

/// Moore-neighbour tracing from the topmost-leftmost pixel, entering from
/// the west, stopped by Jacob's criterion (the first move out of the start
/// pixel is about to repeat).
Contour trace_boundary(const Mask& m, PixelPoint start, std::size_t area) {
  auto fg = [&](int x, int y) { return x >= 0 && y >= 0 && x < m.width && y < m.height && m.at(x, y); };
  std::vector<Vec2> pts;
  PixelPoint cur = start;
  int back = 0;  // direction from cur to the backtrack pixel
  int first = -1;
  for (std::size_t guard = 0; guard < 4 * area + 8; ++guard) {
    int found = -1;
    for (int k = 1; k <= 8 && found < 0; ++k)
      if (const int d = (back + k) % 8; fg(cur.x + kDx[d], cur.y + kDy[d])) found = d;
    if (found < 0) {  // isolated pixel
      pts.push_back({static_cast<double>(cur.x), static_cast<double>(cur.y)});
      break;
    }
    if (cur == start) {
      if (first < 0) first = found;
      else if (found == first) break;
    }
    pts.push_back({static_cast<double>(cur.x), static_cast<double>(cur.y)});
    const int prev = (found + 7) % 8;
    const PixelPoint b{cur.x + kDx[prev], cur.y + kDy[prev]};
    cur = {cur.x + kDx[found], cur.y + kDy[found]};
    for (int d = 0; d < 8; ++d)
      if (cur.x + kDx[d] == b.x && cur.y + kDy[d] == b.y) back = d;
  }
  // Traced clockwise on screen; report counterclockwise from the start pixel.
  std::reverse(pts.begin() + 1, pts.end());
  return {std::move(pts), area};
}

}  // namespace

std::vector<Contour> extract_contours(const Mask& mask, std::size_t min_area) {
  const auto seg = label_components(mask);
  std::vector<Contour> out;
  for (const auto& c : seg.components)
    if (c.area >= min_area) out.push_back(trace_boundary(mask, c.first, c.area));
  return out;
}

// --- polygons ------------------------------------------------------------------------

Contour convex_hull(const std::vector<Vec2>& input) {
  std::vector<Vec2> p = input;
  std::sort(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end()), p.end());
  if (p.size() < 3) throw GeometryError("convex hull needs three distinct points");
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 1] - h[k - 2], p[i] - h[k - 2]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 1] - h[k - 2], p[i] - h[k - 2]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  if (h.size() < 3) throw GeometryError("degenerate hull: points are collinear");
  // Positive shoelace in y-down coordinates is clockwise on screen.
  std::reverse(h.begin(), h.end());
  return {std::move(h), 0};
}

namespace {

void rdp_open(const std::vector<Vec2>& p, std::size_t lo, std::size_t hi, double eps, std::vector<char>& keep) {
  std::vector<std::pair<std::size_t, std::size_t>> stack{{lo, hi}};
  while (!stack.empty()) {
    auto [a, b] = stack.back();
    stack.pop_back();
    if (b <= a + 1) continue;
    const Segment chord{p[a], p[b % p.size()]};
    double best = -1.0;
    std::size_t bi = a;
    for (std::size_t i = a + 1; i < b; ++i) {
      const double d = point_segment_distance(p[i], chord);
      if (d > best) best = d, bi = i;
    }
    if (best > eps) {
      keep[bi] = 1;
      stack.push_back({a, bi});
      stack.push_back({bi, b});
    }
  }
}

}  // namespace

std::vector<Vec2> rdp_closed(const std::vector<Vec2>& poly, double epsilon) {
  if (!(epsilon > 0)) throw DomainError("epsilon must be positive");
  const std::size_t n = poly.size();
  if (n < 3) return poly;
  // Anchor at vertex 0 and the vertex farthest from it.
  std::size_t far = 1;
  for (std::size_t i = 2; i < n; ++i)
    if (distance(poly[i], poly[0]) > distance(poly[far], poly[0])) far = i;
  std::vector<char> keep(n, 0);
  keep[0] = keep[far] = 1;
  rdp_open(poly, 0, far, epsilon, keep);
  rdp_open(poly, far, n, epsilon, keep);  // index n wraps to vertex 0
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(poly[i]);
  return out;
}

std::array<Vec2, 4> canonical_quad(std::array<Vec2, 4> v) {
  const Contour c{{v.begin(), v.end()}, 0};
  if (c.signed_area() < 0) std::reverse(v.begin(), v.end());
  const auto top = std::min_element(v.begin(), v.end(), [](Vec2 a, Vec2 b) { return a.y < b.y || (a.y == b.y && a.x < b.x); });
  std::rotate(v.begin(), top, v.end());
  return v;
}

QuadFeature approx_polygon(const Contour& hull, double epsilon) {
  if (!(epsilon > 0)) throw DomainError("epsilon must be positive");
  constexpr double kLo = 0.5, kHi = 50.0;
  if (hull.points.size() < 4) throw FeatureError("hull has fewer than four vertices");
  // Anchor RDP at the hull diameter: for a quadrilateral view its ends are
  // opposite corners, whereas extreme points of a curved edge are not.
  auto pts = hull.points;
  std::size_t a0 = 0;
  double diam = -1.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      if (const double d = distance(pts[i], pts[j]); d > diam) diam = d, a0 = i;
  std::rotate(pts.begin(), pts.begin() + static_cast<long>(a0), pts.end());
  auto attempt = [&](double e) { return rdp_closed(pts, e); };
  auto finish = [](const std::vector<Vec2>& r) {
    QuadFeature q;
    q.vertices = canonical_quad({r[0], r[1], r[2], r[3]});
    return q;
  };
  auto r = attempt(epsilon);
  if (r.size() == 4) return finish(r);
  // Vertex count falls as epsilon grows; bisect toward exactly four.
  double lo = kLo, hi = kHi;
  if (r.size() > 4) lo = std::max(kLo, epsilon);
  else hi = std::min(kHi, epsilon);
  auto rl = attempt(lo), rh = attempt(hi);
  if (rl.size() == 4) return finish(rl);
  if (rh.size() == 4) return finish(rh);
  if (rl.size() < 4 || rh.size() > 4) throw FeatureError("no epsilon in [0.5, 50] px yields a quadrilateral");
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto rm = attempt(mid);
    if (rm.size() == 4) return finish(rm);
    (rm.size() > 4 ? lo : hi) = mid;
  }
  throw FeatureError("no epsilon in [0.5, 50] px yields a quadrilateral");
}

// --- homography ----------------------------------------------------------------------

Vec2 Homography::apply(Vec2 p) const {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

double Homography::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (!(std::abs(det) > 1e-12)) throw ConditioningError("homography is not invertible");
  Homography h;
  h.m = {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
         m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
         m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  const double s = std::abs(h.m[8]) > 1e-300 ? h.m[8] : det;
  for (double& v : h.m) v /= s;
  return h;
}

namespace {

void check_conditioning(const std::array<Vec2, 4>& q) {
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = q[i], b = q[(i + 1) % 4], c = q[(i + 2) % 4];
    const double la = norm(b - a), lc = norm(c - a);
    if (!(la > 0 && lc > 0) || std::abs(cross(b - a, c - a)) / (la * lc) < 1e-6)
      throw ConditioningError("quad has three (nearly) collinear vertices");
  }
}

Eigen::Matrix3d normalizer(const std::array<Vec2, 4>& q) {
  Vec2 c{};
  for (auto p : q) c += p;
  c = c / 4.0;
  double d = 0.0;
  for (auto p : q) d += distance(p, c);
  const double s = std::sqrt(2.0) / (d / 4.0);
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x, 0, s, -s * c.y, 0, 0, 1;
  return t;
}

}  // namespace

Homography fit_homography(const std::array<Vec2, 4>& from, const std::array<Vec2, 4>& to) {
  check_conditioning(from);
  check_conditioning(to);
  const Eigen::Matrix3d t1 = normalizer(from), t2 = normalizer(to);
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d p = t1 * Eigen::Vector3d(from[i].x, from[i].y, 1.0);
    const Eigen::Vector3d q = t2 * Eigen::Vector3d(to[i].x, to[i].y, 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (lu.rank() < 8) throw ConditioningError("homography system is singular");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  const Eigen::Matrix3d full = t2.inverse() * hn * t1;
  Homography out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.m[static_cast<std::size_t>(3 * r + c)] = full(r, c) / full(2, 2);
  if (!(std::abs(out.determinant()) > 1e-12)) throw ConditioningError("homography is not invertible");
  return out;
}

Homography fit_homography(const std::array<Vec2, 4>& quad, double w, double h) {
  if (!(w > 0 && h > 0)) throw DomainError("target rectangle must have positive size");
  return fit_homography(quad, {Vec2{0, 0}, Vec2{0, h}, Vec2{w, h}, Vec2{w, 0}});
}

RasterImage unwarp(const RasterImage& img, const Homography& to_output, int out_w, int out_h) {
  check_image(img, "unwarp");
  const Homography inv = to_output.inverse();
  RasterImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const Vec2 s = inv.apply({x + 0.5, y + 0.5});
      if (!(s.x >= 0 && s.y >= 0 && s.x <= img.width && s.y <= img.height)) continue;
      const double u = s.x - 0.5, v = s.y - 0.5;
      const int i0 = static_cast<int>(std::floor(u)), j0 = static_cast<int>(std::floor(v));
      const double fu = u - i0, fv = v - j0;
      auto px = [&](int i, int j) {
        return static_cast<double>(img.at(std::clamp(i, 0, img.width - 1), std::clamp(j, 0, img.height - 1)));
      };
      const double val = (1 - fu) * (1 - fv) * px(i0, j0) + fu * (1 - fv) * px(i0 + 1, j0) +
                         (1 - fu) * fv * px(i0, j0 + 1) + fu * fv * px(i0 + 1, j0 + 1);
      out.at(x, y) = to_byte(val);
    }
  return out;
}

// --- frame features -------------------------------------------------------------------

namespace {

/// Pad of every kept component: the largest is the intermediate pad, the
/// others go to the side their centroid lies on. -1 for discarded blobs.
struct PadAssignment {
  std::vector<int> pad_of;                 ///< per component
  std::array<int, 3> representative{-1, -1, -1};  ///< largest component per pad
};

PadAssignment assign_pads(const Segmentation& seg, std::size_t min_area) {
  PadAssignment a;
  a.pad_of.assign(seg.components.size(), -1);
  int mid = -1;
  for (std::size_t i = 0; i < seg.components.size(); ++i)
    if (seg.components[i].area >= min_area && (mid < 0 || seg.components[i].area > seg.components[static_cast<std::size_t>(mid)].area))
      mid = static_cast<int>(i);
  if (mid < 0) return a;
  const double cx = seg.components[static_cast<std::size_t>(mid)].cx;
  for (std::size_t i = 0; i < seg.components.size(); ++i) {
    const auto& c = seg.components[i];
    if (c.area < min_area) continue;
    const int pad = static_cast<int>(i) == mid ? 1 : (c.cx < cx ? 0 : 2);
    a.pad_of[i] = pad;
    int& rep = a.representative[static_cast<std::size_t>(pad)];
    if (rep < 0 || c.area > seg.components[static_cast<std::size_t>(rep)].area) rep = static_cast<int>(i);
  }
  return a;
}

}  // namespace

std::size_t FrameFeatures::count() const {
  return static_cast<std::size_t>(std::count_if(quads.begin(), quads.end(), [](const auto& q) { return q.has_value(); }));
}

std::vector<double> FrameFeatures::vertex_vector() const {
  std::vector<double> v(24, kNaN);
  for (std::size_t k = 0; k < 3; ++k)
    if (quads[k])
      for (std::size_t i = 0; i < 4; ++i) {
        v[8 * k + 2 * i] = quads[k]->vertices[i].x;
        v[8 * k + 2 * i + 1] = quads[k]->vertices[i].y;
      }
  return v;
}

FrameFeatures extract_features(const RasterImage& img, const PipelineOptions& o) {
  const Mask mask = threshold_global(img, o.threshold);
  const auto seg = label_components(mask);
  const auto pads = assign_pads(seg, o.min_area);
  FrameFeatures f;
  f.components = static_cast<std::size_t>(std::count_if(seg.components.begin(), seg.components.end(),
                                                        [&](const Component& c) { return c.area >= o.min_area; }));
  for (std::size_t k = 0; k < 3; ++k) {
    const int rep = pads.representative[k];
    if (rep < 0) continue;
    const auto& c = seg.components[static_cast<std::size_t>(rep)];
    auto contour = trace_boundary(mask, c.first, c.area);
    try {
      auto q = approx_polygon(convex_hull(contour), o.epsilon);
      q.pad = static_cast<int>(k);
      f.quads[k] = q;
    } catch (const GeometryError&) {
    } catch (const FeatureError&) {
    }
    f.blobs[k] = std::move(contour);
  }
  return f;
}

DifferenceResult difference_image(const RasterImage& current, const RasterImage& reference, const PipelineOptions& o) {
  check_image(current, "difference");
  check_image(reference, "difference");
  if (current.width != reference.width || current.height != reference.height)
    throw DomainError("difference: image dimensions differ");
  DifferenceResult r;
  r.delta = {current.width, current.height, std::vector<std::int16_t>(current.data.size())};
  for (std::size_t i = 0; i < current.data.size(); ++i)
    r.delta.data[i] = static_cast<std::int16_t>(static_cast<int>(current.data[i]) - static_cast<int>(reference.data[i]));

  const auto seg = label_components(threshold_global(reference, o.threshold));
  const auto pads = assign_pads(seg, o.min_area);
  std::array<double, 3> sum_abs{};
  for (auto& p : r.report.pads) p.imprint = Mask(current.width, current.height);
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    const int lab = seg.labels[i];
    if (lab < 0) continue;
    const int pad = pads.pad_of[static_cast<std::size_t>(lab)];
    if (pad < 0) continue;
    auto& p = r.report.pads[static_cast<std::size_t>(pad)];
    const int d = std::abs(static_cast<int>(r.delta.data[i]));
    ++p.pixels;
    sum_abs[static_cast<std::size_t>(pad)] += d;
    if (d >= o.contact_delta) {
      ++p.changed;
      p.imprint.data[i] = 255;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    auto& p = r.report.pads[k];
    p.present = p.pixels > 0;
    p.mean_abs_delta = p.present ? sum_abs[k] / static_cast<double>(p.pixels) : 0.0;
    p.contact = p.present && p.changed > 0 &&
                static_cast<double>(p.changed) >= o.contact_fraction * static_cast<double>(p.pixels);
  }
  return r;
}

// --- calibration ----------------------------------------------------------------------

std::size_t CalibrationTable::failures() const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return !s.valid; }));
}

void validate(const CalibrationTable& t) {
  auto axis_ok = [](const std::vector<double>& a) {
    if (a.size() < 2) return false;
    for (std::size_t i = 1; i < a.size(); ++i)
      if (!(a[i] > a[i - 1])) return false;
    return true;
  };
  if (!axis_ok(t.pip_axis)) throw ValidationError("needs at least two increasing values", "pip_axis");
  if (!axis_ok(t.dip_axis)) throw ValidationError("needs at least two increasing values", "dip_axis");
  if (t.samples.size() != t.pip_axis.size() * t.dip_axis.size())
    throw ValidationError("must hold one sample per grid point", "samples");
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    const auto& s = t.samples[i];
    const std::string path = "samples[" + std::to_string(i) + "]";
    if (s.pip_deg != t.pip_axis[i / t.dip_axis.size()] || s.dip_deg != t.dip_axis[i % t.dip_axis.size()])
      throw ValidationError("angles do not match the grid", path);
    if (!s.valid) continue;
    if (s.vertices.size() != 24) throw ValidationError("needs 24 vertex coordinates", path + ".vertices");
    for (double v : s.vertices)
      if (!std::isfinite(v)) throw ValidationError("vertex coordinates must be finite", path + ".vertices");
  }
}

namespace {

std::vector<double> grid_axis(double hi, double step) {
  if (!(step > 0)) throw ValidationError("grid step must be positive", "step_deg");
  std::vector<double> a;
  for (int k = 0; k * step < hi - 1e-9; ++k) a.push_back(k * step);
  a.push_back(hi);
  return a;
}

}  // namespace

CalibrationTable build_calibration(const finger::FingerParams& params, double step_deg, const RenderOptions& render_opts,
                                   const PipelineOptions& pipeline, const CalibrationProgress& progress) {
  auto t = build_calibration(params, grid_axis(params.pip_max_deg, step_deg), grid_axis(params.dip_max_deg, step_deg),
                             render_opts, pipeline, progress);
  t.grid_step_deg = step_deg;
  return t;
}

CalibrationTable build_calibration(const finger::FingerParams& params, std::vector<double> pip_axis,
                                   std::vector<double> dip_axis, const RenderOptions& render_opts,
                                   const PipelineOptions& pipeline, const CalibrationProgress& progress) {
  CalibrationTable t;
  t.pip_axis = std::move(pip_axis);
  t.dip_axis = std::move(dip_axis);
  t.render = render_opts;
  t.pipeline = pipeline;
  for (double a : t.pip_axis)
    if (a < 0 || a > params.pip_max_deg) throw DomainError("calibration grid outside the PIP range");
  for (double b : t.dip_axis)
    if (b < 0 || b > params.dip_max_deg) throw DomainError("calibration grid outside the DIP range");
  const std::size_t nd = t.dip_axis.size();
  t.samples.resize(t.pip_axis.size() * nd);
  const auto& opts = render_opts;
  const std::size_t rows = progress && !t.pip_axis.empty() ? t.pip_axis.size() : 1;
  const std::size_t chunk = t.samples.size() / rows;
  for (std::size_t row = 0; row < rows; ++row) {
    parallel_for(chunk, [&](std::size_t off) {
      const std::size_t idx = row * chunk + off;
      auto& s = t.samples[idx];
      s.pip_deg = t.pip_axis[idx / nd];
      s.dip_deg = t.dip_axis[idx % nd];
      // One worker per point; the outer loop owns the threads.
      const auto r = render(params, s.pip_deg, s.dip_deg, {}, opts, 1);
      const auto f = extract_features(r.image, pipeline);
      s.vertices = f.vertex_vector();
      for (std::size_t k = 0; k < 3 && s.failure.empty(); ++k) {
        if (!f.quads[k]) {
          s.failure = std::string(finger::phalanx_name(finger::kPhalanges[k])) + " pad not found";
          break;
        }
        // The labelled view must actually show that pad.
        Vec2 c{};
        for (auto v : f.quads[k]->vertices) c += v;
        const auto col = std::clamp(static_cast<int>(c.x / 4.0), 0, opts.width - 1);
        const auto& px = r.report.pixels[static_cast<std::size_t>(col)];
        if (px.terminal != optics::Terminal::pad || px.pad != static_cast<int>(k))
          s.failure = std::string(finger::phalanx_name(finger::kPhalanges[k])) + " pad mislabelled";
      }
      s.valid = s.failure.empty();
    });
    if (progress && !progress(static_cast<double>(row + 1) / static_cast<double>(rows)))
      throw CancelledError("calibration cancelled");
  }
  if (static_cast<double>(t.failures()) > 0.05 * static_cast<double>(t.samples.size()))
    throw FeatureError("calibration: feature extraction failed at " + std::to_string(t.failures()) + " of " +
                       std::to_string(t.samples.size()) + " grid points");
  return t;
}

double min_separation(const CalibrationTable& t) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    if (!t.samples[i].valid) continue;
    for (std::size_t j = i + 1; j < t.samples.size(); ++j) {
      if (!t.samples[j].valid) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < 24; ++k) {
        const double d = t.samples[i].vertices[k] - t.samples[j].vertices[k];
        d2 += d * d;
      }
      best = std::min(best, std::sqrt(d2));
    }
  }
  return best;
}

JointEstimate estimate_joint_angles(const CalibrationTable& t, const std::vector<double>& v) {
  validate(t);
  if (v.size() != 24) throw DomainError("vertex vector must have 24 entries");
  std::vector<std::size_t> used;
  std::size_t pads = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    bool ok = true;
    for (std::size_t i = 0; i < 8; ++i) ok = ok && std::isfinite(v[8 * k + i]);
    if (!ok) continue;
    ++pads;
    for (std::size_t i = 0; i < 8; ++i) used.push_back(8 * k + i);
  }
  if (pads < 2) throw FeatureError("fewer than two pad quadrilaterals extracted");

  auto dist2 = [&](const CalibrationSample& s) {
    double d2 = 0.0;
    for (auto k : used) d2 += (v[k] - s.vertices[k]) * (v[k] - s.vertices[k]);
    return d2;
  };
  std::size_t nn = t.samples.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.samples.size(); ++i)
    if (t.samples[i].valid) {
      const double d2 = dist2(t.samples[i]);
      if (d2 < best) best = d2, nn = i;
    }
  if (nn == t.samples.size()) throw FeatureError("calibration table has no valid samples");

  const std::size_t nd = t.dip_axis.size(), ci = nn / nd, cj = nn % nd;
  const auto& c = t.samples[nn];
  const auto m = static_cast<Eigen::Index>(used.size());
  auto gather = [&](const CalibrationSample& s) {
    Eigen::VectorXd out(m);
    for (Eigen::Index k = 0; k < m; ++k) out(k) = s.vertices[used[static_cast<std::size_t>(k)]];
    return out;
  };
  const Eigen::VectorXd obs = [&] {
    Eigen::VectorXd o(m);
    for (Eigen::Index k = 0; k < m; ++k) o(k) = v[used[static_cast<std::size_t>(k)]];
    return o;
  }();
  const Eigen::VectorXd v00 = gather(c);

  // Bilinear model on each grid cell touching the neighbour, solved by
  // Gauss-Newton for the cell coordinates (alpha, beta). Half a cell of
  // extrapolation past the neighbour is allowed. The best-fitting cell wins,
  // which keeps views that switch between grid points from leaking across.
  double best_alpha = 0.0, best_beta = 0.0, best_pip_span = 0.0, best_dip_span = 0.0;
  double best_r2 = (obs - v00).squaredNorm();
  for (int si : {1, -1})
    for (int sj : {1, -1}) {
      const long i1 = static_cast<long>(ci) + si, j1 = static_cast<long>(cj) + sj;
      if (i1 < 0 || j1 < 0 || i1 >= static_cast<long>(t.pip_axis.size()) || j1 >= static_cast<long>(nd)) continue;
      const auto& s10 = t.sample(static_cast<std::size_t>(i1), cj);
      const auto& s01 = t.sample(ci, static_cast<std::size_t>(j1));
      const auto& s11 = t.sample(static_cast<std::size_t>(i1), static_cast<std::size_t>(j1));
      if (!s10.valid || !s01.valid || !s11.valid) continue;
      const Eigen::VectorXd da = gather(s10) - v00, db = gather(s01) - v00;
      const Eigen::VectorXd dab = gather(s11) - gather(s10) - gather(s01) + v00;
      double al = 0.0, be = 0.0;
      Eigen::VectorXd r = obs - v00;
      for (int it = 0; it < 8; ++it) {
        Eigen::MatrixXd J(m, 2);
        J.col(0) = da + be * dab;
        J.col(1) = db + al * dab;
        const Eigen::Matrix2d jtj = J.transpose() * J;
        if (!(std::abs(jtj.determinant()) > 1e-12 * std::max(1.0, jtj.squaredNorm()))) break;
        const Eigen::Vector2d step = jtj.ldlt().solve(J.transpose() * r);
        const double na = std::clamp(al + step(0), -0.5, 1.0), nb = std::clamp(be + step(1), -0.5, 1.0);
        const bool moved = na != al || nb != be;
        al = na, be = nb;
        r = obs - v00 - al * da - be * db - al * be * dab;
        if (!moved) break;
      }
      const double r2 = r.squaredNorm();
      if (r2 < best_r2) {
        best_r2 = r2;
        best_alpha = al, best_beta = be;
        best_pip_span = s10.pip_deg - c.pip_deg, best_dip_span = s01.dip_deg - c.dip_deg;
      }
    }
  JointEstimate e;
  e.pip_deg = c.pip_deg + best_alpha * best_pip_span;
  e.dip_deg = c.dip_deg + best_beta * best_dip_span;
  e.pip_deg = std::clamp(e.pip_deg, t.pip_axis.front(), t.pip_axis.back());
  e.dip_deg = std::clamp(e.dip_deg, t.dip_axis.front(), t.dip_axis.back());
  e.distance = std::sqrt(best_r2 / static_cast<double>(m));
  e.pads = pads;
  e.confidence = (static_cast<double>(pads) / 3.0) / (1.0 + e.distance);
  e.nearest = nn;
  return e;
}

JointEstimate estimate_joint_angles(const CalibrationTable& t, const RasterImage& img) {
  return estimate_joint_angles(t, extract_features(img, t.pipeline).vertex_vector());
}

}  // namespace linkfold::perception
