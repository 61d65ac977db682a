#include "linkfold/optics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "linkfold/error.hpp"
#include "linkfold/parallel.hpp"

namespace linkfold::optics {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kMinTravel = 1e-9;
constexpr int kEdgeIterations = 20;  // ~1e-6 pixel

bool is_unit(Vec2 v) { return std::abs(norm(v) - 1.0) <= kUnitTol; }

std::uint64_t push_mirror(std::uint64_t key, int bounce, int mirror) {
  return key | (static_cast<std::uint64_t>(mirror + 1) & 0xffff) << (16 * bounce);
}

struct Run {
  int pad;
  std::size_t first, last;  // pixel range, inclusive
};

std::vector<Run> pad_runs(const std::vector<PixelTerminal>& px) {
  std::vector<Run> runs;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const auto& p = px[i];
    if (p.terminal != Terminal::pad) continue;
    if (!runs.empty() && runs.back().last + 1 == i) {
      const auto& q = px[runs.back().last];
      if (q.pad == p.pad && q.bounces == p.bounces && q.mirror_key == p.mirror_key) {
        runs.back().last = i;
        continue;
      }
    }
    runs.push_back({p.pad, i, i});
  }
  return runs;
}

bool same_class(const PixelTerminal& a, const PixelTerminal& b) {
  return a.terminal == Terminal::pad && b.terminal == Terminal::pad && a.pad == b.pad && a.bounces == b.bounces &&
         a.mirror_key == b.mirror_key;
}

PixelTerminal summarize(const RayPath& path);

PixelTerminal trace_at(const OpticsScene& scene, double u) {
  return summarize(trace(scene, scene.camera.position, unit_from_angle(scene.camera.pixel_angle(u))));
}

/// Pad parameter at the exact end of a run: bisects the continuous pixel
/// coordinate between the run's edge pixel and its outer neighbour (or the
/// field-of-view edge).
double refine_edge(const OpticsScene& scene, const PixelTerminal& ref, double u_in, double u_out, bool fov_edge) {
  if (fov_edge) {
    const auto e = trace_at(scene, u_out);
    if (same_class(e, ref)) return e.t;
  }
  double t = ref.t;
  for (int k = 0; k < kEdgeIterations; ++k) {
    const double mid = 0.5 * (u_in + u_out);
    const auto m = trace_at(scene, mid);
    if (same_class(m, ref)) {
      u_in = mid;
      t = m.t;
    } else {
      u_out = mid;
    }
  }
  return t;
}

VisibilityReport make_report(const OpticsScene& scene, std::vector<PixelTerminal> px, std::size_t threads) {
  VisibilityReport r;
  std::array<std::vector<Interval>, 3> raw;
  const auto runs = pad_runs(px);
  const double n = static_cast<double>(px.size());
  std::vector<double> edge(2 * runs.size());
  parallel_for(
      edge.size(),
      [&](std::size_t k) {
        const auto& run = runs[k / 2];
        if (k % 2 == 0) {
          const double c = static_cast<double>(run.first) + 0.5;
          edge[k] = refine_edge(scene, px[run.first], c, run.first == 0 ? 0.0 : c - 1.0, run.first == 0);
        } else {
          const double c = static_cast<double>(run.last) + 0.5;
          const bool last = run.last + 1 == px.size();
          edge[k] = refine_edge(scene, px[run.last], c, last ? n : c + 1.0, last);
        }
      },
      threads);
  for (std::size_t j = 0; j < runs.size(); ++j) {
    const auto& run = runs[j];
    Interval iv{std::min(edge[2 * j], edge[2 * j + 1]), std::max(edge[2 * j], edge[2 * j + 1])};
    for (std::size_t i = run.first; i <= run.last; ++i) {
      iv.lo = std::min(iv.lo, px[i].t);
      iv.hi = std::max(iv.hi, px[i].t);
    }
    raw[run.pad].push_back(iv);
  }
  for (int k = 0; k < 3; ++k) {
    auto& v = raw[k];
    std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) {
      return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });
    auto& out = r.intervals[k];
    for (const auto& iv : v) {
      if (!out.empty() && iv.lo <= out.back().hi)
        out.back().hi = std::max(out.back().hi, iv.hi);
      else
        out.push_back(iv);
    }
    double total = 0.0;
    for (const auto& iv : out) total += iv.hi - iv.lo;
    r.fraction[k] = std::clamp(total, 0.0, 1.0);
  }
  r.pixels = std::move(px);
  return r;
}

PixelTerminal summarize(const RayPath& path) {
  PixelTerminal p;
  p.terminal = path.terminal;
  p.pad = path.pad;
  p.t = path.t;
  p.bounces = path.bounces;
  for (int b = 0; b < static_cast<int>(path.mirrors.size()); ++b) p.mirror_key = push_mirror(p.mirror_key, b, path.mirrors[b]);
  p.path_length = path.length();
  return p;
}

VisibilityReport visibility_impl(const OpticsScene& scene, std::size_t threads) {
  validate(scene.camera);
  std::vector<PixelTerminal> px(static_cast<std::size_t>(scene.camera.pixels));
  parallel_for(
      px.size(), [&](std::size_t i) { px[i] = summarize(trace_ray(scene, static_cast<int>(i))); }, threads);
  return make_report(scene, std::move(px), threads);
}

}  // namespace

const char* terminal_name(Terminal t) {
  switch (t) {
    case Terminal::pad: return "pad";
    case Terminal::occluded: return "occluded";
    case Terminal::escaped: return "escaped";
  }
  return "?";
}

double Camera2D::pixel_pitch() const { return deg2rad(fov_deg) / pixels; }

double Camera2D::pixel_angle(double u) const { return boresight + deg2rad(fov_deg) / 2.0 - u * pixel_pitch(); }

Vec2 Camera2D::pixel_direction(int pixel) const { return unit_from_angle(pixel_angle(pixel + 0.5)); }

void validate(const Mirror& m) {
  if (!is_finite(m.segment.a) || !is_finite(m.segment.b)) throw ValidationError("non-finite mirror endpoint");
  if (m.segment.length() < 1e-9) throw ValidationError("mirror has zero length");
}

void validate(const Camera2D& c) {
  if (!(c.fov_deg > 0.0 && c.fov_deg <= 180.0)) throw ValidationError("fov must lie in (0, 180] degrees", "fov_deg");
  if (c.pixels < 1) throw ValidationError("pixel count must be positive", "pixels");
  if (!is_finite(c.position) || !std::isfinite(c.boresight)) throw ValidationError("non-finite camera pose");
}

double RayPath::length() const {
  double l = 0.0;
  for (std::size_t i = 1; i < vertices.size(); ++i) l += distance(vertices[i - 1], vertices[i]);
  return l;
}

Vec2 reflect(Vec2 d, Vec2 n) {
  if (!is_unit(d) || !is_unit(n)) throw DomainError("reflect expects unit vectors");
  return d - 2.0 * dot(d, n) * n;
}

RayPath trace(const OpticsScene& scene, Vec2 origin, Vec2 dir) {
  RayPath path;
  path.vertices.push_back(origin);
  Vec2 o = origin, d = normalized(dir);
  int last_mirror = -1;
  const int nm = static_cast<int>(scene.mirrors.size());
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    int kind = -1, index = -1;  // 0 pad, 1 mirror, 2 occluder
    double best_t = 0.0;
    auto consider = [&](const Segment& s, int k, int i) {
      if (auto h = intersect_ray_segment(o, d, s, kMinTravel); h && h->distance < best) {
        best = h->distance;
        best_t = h->t;
        kind = k;
        index = i;
      }
    };
    for (int i = 0; i < 3; ++i) consider(scene.pads[i], 0, i);
    for (int i = 0; i < nm; ++i)
      if (i != last_mirror) consider(scene.mirrors[i].segment, 1, i);
    for (int i = 0; i < static_cast<int>(scene.occluders.size()); ++i) consider(scene.occluders[i], 2, i);

    if (kind < 0) {
      path.terminal = Terminal::escaped;
      return path;
    }
    const Vec2 hit = o + best * d;
    path.vertices.push_back(hit);
    if (kind == 0) {
      path.terminal = Terminal::pad;
      path.pad = index;
      path.t = best_t;
      return path;
    }
    if (kind == 2) {
      path.terminal = Terminal::occluded;
      return path;
    }
    const Vec2 n = scene.mirrors[index].normal();
    if (dot(d, n) >= 0.0) {  // back face
      path.terminal = Terminal::occluded;
      return path;
    }
    if (path.bounces == scene.max_bounces) {
      path.terminal = Terminal::escaped;
      return path;
    }
    d = reflect(d, n);
    o = hit;
    last_mirror = index;
    ++path.bounces;
    path.mirrors.push_back(index);
  }
}

RayPath trace_ray(const OpticsScene& scene, int pixel) {
  if (pixel < 0 || pixel >= scene.camera.pixels) throw DomainError("pixel index out of range: " + std::to_string(pixel));
  return trace(scene, scene.camera.position, scene.camera.pixel_direction(pixel));
}

double VisibilityReport::min_fraction() const { return *std::min_element(fraction.begin(), fraction.end()); }

VisibilityReport visibility(const OpticsScene& scene, std::size_t threads) { return visibility_impl(scene, threads); }

std::vector<PadSample> project_pad(const VisibilityReport& report, int pad) {
  if (pad < 0 || pad > 2) throw DomainError("pad id out of range");
  std::vector<PadSample> out;
  int piece = 0;
  for (const auto& run : pad_runs(report.pixels)) {
    if (run.pad != pad) continue;
    for (std::size_t i = run.first; i <= run.last; ++i) {
      const auto& p = report.pixels[i];
      out.push_back({p.t, static_cast<double>(i) + 0.5, p.path_length, piece});
    }
    ++piece;
  }
  if (out.empty()) throw VisibilityError(std::string("pad not visible: ") + finger::phalanx_name(finger::kPhalanges[pad]));
  return out;
}

std::vector<PadSample> project_pad(const OpticsScene& scene, int pad) { return project_pad(visibility(scene), pad); }

// ---------------------------------------------------------------------------

void validate(const SceneTemplate& tpl) {
  if (!(tpl.fov_deg > 0.0 && tpl.fov_deg <= 180.0)) throw ValidationError("fov must lie in (0, 180] degrees", "camera.fov_deg");
  if (tpl.pixels < 1) throw ValidationError("pixel count must be positive", "camera.pixels");
  if (tpl.max_bounces < 0) throw ValidationError("must be non-negative", "max_bounces");
  for (std::size_t i = 0; i < tpl.mirrors.size(); ++i)
    if (tpl.mirrors[i].local.length() < 1e-9)
      throw ValidationError("mirror has zero length", "mirrors[" + std::to_string(i) + "]");
}

OpticsScene build_scene(const finger::FingerParams& params, const SceneTemplate& tpl, double pip_deg, double dip_deg) {
  const auto poses = finger::forward_kinematics(params, pip_deg, dip_deg);
  const auto& f = poses.frames;
  OpticsScene s;
  s.pads = poses.pads;
  s.camera.position = f[1].apply(tpl.camera_position);
  s.camera.boresight = f[1].angle + deg2rad(tpl.camera_tilt_deg);
  s.camera.fov_deg = tpl.fov_deg;
  s.camera.pixels = tpl.pixels;
  s.max_bounces = tpl.max_bounces;
  for (const auto& m : tpl.mirrors) {
    const auto& p = f[static_cast<int>(m.phalanx)];
    s.mirrors.push_back({{p.apply(m.local.a), p.apply(m.local.b)}});
  }
  if (tpl.shell_occluders) s.occluders = finger::shell_segments(params, poses);
  for (const auto& o : tpl.occluders) {
    const auto& p = f[static_cast<int>(o.phalanx)];
    s.occluders.push_back({p.apply(o.local.a), p.apply(o.local.b)});
  }
  return s;
}

ConfigGrid square_grid(const finger::FingerParams& params, double step) {
  if (!(step > 0.0)) throw ValidationError("grid step must be positive", "grid");
  auto axis = [step](double hi) {
    std::vector<double> v;
    const int n = static_cast<int>(std::floor(hi / step + 1e-9));
    for (int k = 0; k <= n; ++k) v.push_back(k * step);
    if (hi - v.back() > 1e-9) v.push_back(hi);
    return v;
  };
  ConfigGrid g;
  for (double a : axis(params.pip_max_deg))
    for (double b : axis(params.dip_max_deg)) g.emplace_back(a, b);
  return g;
}

double CoverageSummary::maximin() const {
  return feasible ? *std::min_element(min.begin(), min.end()) : 0.0;
}

CoverageSummary coverage_sweep(const finger::FingerParams& params, const SceneTemplate& tpl, const ConfigGrid& grid) {
  validate(tpl);
  CoverageSummary out;
  out.entries.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    auto& e = out.entries[i];
    e.pip_deg = grid[i].first;
    e.dip_deg = grid[i].second;
    try {
      e.fraction = visibility_impl(build_scene(params, tpl, e.pip_deg, e.dip_deg), 1).fraction;
      e.feasible = true;
    } catch (const DomainError&) {
      e.feasible = false;
    }
  });
  out.min.fill(1.0);
  for (const auto& e : out.entries) {
    if (!e.feasible) continue;
    ++out.feasible;
    for (int k = 0; k < 3; ++k) {
      out.min[k] = std::min(out.min[k], e.fraction[k]);
      out.mean[k] += e.fraction[k];
    }
  }
  if (out.feasible == 0) out.min.fill(0.0);
  for (auto& m : out.mean) m = out.feasible ? m / static_cast<double>(out.feasible) : 0.0;
  return out;
}

}  // namespace linkfold::optics

namespace linkfold::optics {

SceneTemplate default_scene_template() {
  // Produced by optimize_optics on the default space (seed 1, budget 5000).
  SceneTemplate t;
  t.camera_position = {12.158345323181152, -23.344967371368412};
  t.camera_tilt_deg = 84.997182812500014;
  t.mirrors = {
      {finger::Phalanx::proximal, {{1.6105199506759647, -13.279954101562499}, {35.0, -26.240436454582213}}},
      {finger::Phalanx::distal, {{0.0, -24.695382812500004}, {29.663512499999996, -11.98625}}},
  };
  return t;
}

}  // namespace linkfold::optics
