#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "linkfold/finger.hpp"
#include "linkfold/geometry.hpp"

/// Planar reflection simulator: a pinhole camera riding the intermediate
/// phalanx looks at the three sensing pads directly and through mirrors.
namespace linkfold::optics {

/// One-sided planar mirror. The reflective side is the left of a -> b;
/// rays arriving from the other side are absorbed.
struct Mirror {
  Segment segment;

  Vec2 normal() const { return normalized(perp(segment.direction())); }
};

struct Camera2D {
  Vec2 position{};
  double boresight = 0.0;  ///< radians, world frame
  double fov_deg = 160.0;
  int pixels = 1440;

  /// Angular pitch of one pixel, radians.
  double pixel_pitch() const;
  /// Uniform angular sampling; pixel 0 sits at the counterclockwise edge.
  double pixel_angle(double pixel_coordinate) const;
  Vec2 pixel_direction(int pixel) const;
};

void validate(const Mirror& mirror);
void validate(const Camera2D& camera);

struct OpticsScene {
  std::array<Segment, 3> pads;  ///< proximal, intermediate, distal
  std::vector<Mirror> mirrors;
  std::vector<Segment> occluders;
  Camera2D camera;
  int max_bounces = 4;
};

enum class Terminal { pad, occluded, escaped };
const char* terminal_name(Terminal t);

struct RayPath {
  std::vector<Vec2> vertices;  ///< camera, bounce points, terminal point
  Terminal terminal = Terminal::escaped;
  int pad = -1;
  double t = 0.0;  ///< arclength parameter on the pad, [0, 1]
  int bounces = 0;
  std::vector<int> mirrors;  ///< mirror index of each bounce

  double length() const;
};

/// r = d - 2 (d.n) n. Throws DomainError for non-unit inputs.
Vec2 reflect(Vec2 direction, Vec2 normal);

/// Nearest-intersection marching from an arbitrary origin and direction.
/// A ray still bouncing after max_bounces is reported as escaped.
RayPath trace(const OpticsScene& scene, Vec2 origin, Vec2 direction);
RayPath trace_ray(const OpticsScene& scene, int pixel);

struct PixelTerminal {
  Terminal terminal = Terminal::escaped;
  int pad = -1;
  double t = 0.0;
  int bounces = 0;
  std::uint64_t mirror_key = 0;  ///< packed mirror sequence
  double path_length = 0.0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct VisibilityReport {
  std::array<double, 3> fraction{};
  std::array<std::vector<Interval>, 3> intervals;  ///< merged, ascending
  std::vector<PixelTerminal> pixels;

  double min_fraction() const;
};

/// Traces every pixel. Consecutive pixels landing on the same pad through
/// the same mirror sequence form a run; each end of a run is refined by
/// bisection between pixel centres to the exact transition (or the edge of
/// the field of view). The runs of a pad are merged and their measure is the
/// visible fraction. `threads` = 0 uses thread_count().
VisibilityReport visibility(const OpticsScene& scene, std::size_t threads = 0);

struct PadSample {
  double t = 0.0;
  double pixel = 0.0;        ///< image column coordinate (pixel centre = i + 0.5)
  double path_length = 0.0;  ///< mm, camera to pad along the folded ray
  int piece = 0;             ///< consecutive run; t is monotone within a piece
};

/// Pad-to-image mapping in pixel order. Throws VisibilityError when the pad
/// is not seen at all.
std::vector<PadSample> project_pad(const OpticsScene& scene, int pad);
std::vector<PadSample> project_pad(const VisibilityReport& report, int pad);

// --- scenes riding on the finger ------------------------------------------

struct MirrorTemplate {
  finger::Phalanx phalanx = finger::Phalanx::distal;
  Segment local;  ///< phalanx frame; reflective side on the left of a -> b
};

struct OccluderTemplate {
  finger::Phalanx phalanx = finger::Phalanx::proximal;
  Segment local;
};

/// Camera and mirrors in phalanx-local frames.
struct SceneTemplate {
  Vec2 camera_position{};   ///< intermediate frame
  double camera_tilt_deg = 90.0;  ///< boresight relative to the intermediate x axis
  double fov_deg = 160.0;
  int pixels = 1440;
  std::vector<MirrorTemplate> mirrors;
  std::vector<OccluderTemplate> occluders;
  bool shell_occluders = true;
  int max_bounces = 4;
};

void validate(const SceneTemplate& tpl);

/// Optimized placement shipped with the reference finger.
SceneTemplate default_scene_template();

OpticsScene build_scene(const finger::FingerParams& params, const SceneTemplate& tpl, double pip_deg,
                        double dip_deg);

using ConfigGrid = std::vector<std::pair<double, double>>;  ///< (pip, dip) degrees

/// Full square grid over [0, pip_max] x [0, dip_max] with the given step.
ConfigGrid square_grid(const finger::FingerParams& params, double step_deg);

struct CoverageEntry {
  double pip_deg = 0.0;
  double dip_deg = 0.0;
  bool feasible = false;
  std::array<double, 3> fraction{};
};

struct CoverageSummary {
  std::vector<CoverageEntry> entries;
  std::array<double, 3> min{};
  std::array<double, 3> mean{};
  std::size_t feasible = 0;

  /// Worst pad over the worst configuration; 0 when nothing is feasible.
  double maximin() const;
};

/// Rebuilds the scene for every grid configuration; infeasible entries are
/// flagged and left out of the aggregates.
CoverageSummary coverage_sweep(const finger::FingerParams& params, const SceneTemplate& tpl, const ConfigGrid& grid);

}  // namespace linkfold::optics
