#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "linkfold/finger.hpp"
#include "linkfold/geometry.hpp"
#include "linkfold/optics.hpp"

/// Tactile-frame interpretation: synthetic rendering, segmentation, pad
/// quadrilaterals, rectification, contact detection and lookup-table
/// proprioception. Image coordinates: x to the right, y downwards, pixel
/// (i, j) covers [i, i + 1) x [j, j + 1). Contour and quad points are pixel
/// indices. "Counterclockwise" always means as displayed on screen.
namespace linkfold::perception {

struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  ///< row-major

  RasterImage() = default;
  RasterImage(int w, int h, std::uint8_t fill = 0);
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Binary image; nonzero is foreground.
using Mask = RasterImage;

struct PixelPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(PixelPoint, PixelPoint) = default;
};

struct Contour {
  std::vector<Vec2> points;  ///< closed loop, last point not repeated
  std::size_t area = 0;      ///< pixel count of the component (0 for derived polygons)

  double perimeter() const;
  double signed_area() const;  ///< shoelace; > 0 is counterclockwise on screen
};

struct QuadFeature {
  int pad = -1;  ///< 0 proximal, 1 intermediate, 2 distal
  std::array<Vec2, 4> vertices{};  ///< topmost-then-leftmost first, counterclockwise
};

struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};  ///< row-major, m[8] == 1

  Vec2 apply(Vec2 p) const;
  Homography inverse() const;
  double determinant() const;
};

struct Imprint {
  int pad = 0;
  double t = 0.5;          ///< along the pad, [0, 1]
  double radius_mm = 3.0;
  double depth = 50.0;     ///< intensity removed inside the blob
};

struct RenderOptions {
  int width = 1440;   ///< one column per camera ray
  int height = 1080;
  double base = 200.0;          ///< direct-view pad intensity
  double reflectance = 0.65;    ///< intensity factor per mirror bounce
  double border_mm = 0.5;       ///< dark frame at both pad ends
  optics::SceneTemplate scene = optics::default_scene_template();
};

/// Renders the camera frame: each column shows what its ray lands on; pad
/// columns are lit over the pad's lateral width scaled by 1/path-length.
/// Throws DomainError for configurations outside the joint limits.
RasterImage synth_render(const finger::FingerParams& params, double pip_deg, double dip_deg,
                         const std::vector<Imprint>& imprints = {}, const RenderOptions& options = {});

struct PipelineOptions {
  int threshold = 100;
  std::size_t min_area = 500;
  double epsilon = 2.0;  ///< initial polygon tolerance, px
  int contact_delta = 8;
  double contact_fraction = 0.01;
};

Mask threshold_global(const RasterImage& img, int level = 100);

/// One outer boundary per 8-connected component with at least `min_area`
/// pixels, traced counterclockwise, components in raster order of their
/// first pixel.
std::vector<Contour> extract_contours(const Mask& mask, std::size_t min_area = 500);

/// Andrew's monotone chain; counterclockwise, no collinear vertices.
/// Throws GeometryError when fewer than three non-collinear points exist.
Contour convex_hull(const std::vector<Vec2>& points);
inline Contour convex_hull(const Contour& c) { return convex_hull(c.points); }

/// Closed-polygon Ramer-Douglas-Peucker.
std::vector<Vec2> rdp_closed(const std::vector<Vec2>& polygon, double epsilon);

/// RDP on the hull, bracketing epsilon until exactly four vertices remain.
/// Throws FeatureError when no epsilon in [0.5, 50] px gives a quadrilateral.
QuadFeature approx_polygon(const Contour& hull, double epsilon = 2.0);

/// Topmost-then-leftmost start, counterclockwise.
std::array<Vec2, 4> canonical_quad(std::array<Vec2, 4> v);

/// Exact four-point projective map sending the quad corners to the
/// rectangle (0,0), (0,h), (w,h), (w,0). Throws ConditioningError for
/// near-degenerate quads.
Homography fit_homography(const std::array<Vec2, 4>& quad, double rect_width, double rect_height);
Homography fit_homography(const std::array<Vec2, 4>& from, const std::array<Vec2, 4>& to);

/// Inverse-mapped bilinear resampling; `to_output` maps source to output
/// coordinates. Output pixels whose source falls outside the image are 0.
RasterImage unwarp(const RasterImage& img, const Homography& to_output, int out_width, int out_height);

// --- frame features ---------------------------------------------------------

/// Pad views found in one frame. The intermediate pad faces the camera and
/// is the largest blob; each outer pad is the largest blob on its side.
struct FrameFeatures {
  std::array<std::optional<QuadFeature>, 3> quads;
  std::array<std::optional<Contour>, 3> blobs;  ///< outer contour each quad came from
  std::size_t components = 0;

  std::size_t count() const;
  /// 24 numbers, pads in order; missing pads are NaN.
  std::vector<double> vertex_vector() const;
};

FrameFeatures extract_features(const RasterImage& img, const PipelineOptions& options = {});

struct PadContact {
  bool present = false;  ///< the pad is visible in the reference frame
  bool contact = false;
  std::size_t pixels = 0;
  std::size_t changed = 0;  ///< pad pixels with |delta| >= contact_delta
  double mean_abs_delta = 0.0;
  Mask imprint;  ///< changed pad pixels
};

struct ContactReport {
  std::array<PadContact, 3> pads;
};

struct SignedImage {
  int width = 0;
  int height = 0;
  std::vector<std::int16_t> data;
};

struct DifferenceResult {
  SignedImage delta;  ///< current - reference
  ContactReport report;
};

/// Pad regions come from segmenting the reference frame. Throws DomainError
/// on a size mismatch.
DifferenceResult difference_image(const RasterImage& current, const RasterImage& reference,
                                  const PipelineOptions& options = {});

// --- proprioception -----------------------------------------------------------

struct CalibrationSample {
  double pip_deg = 0.0;
  double dip_deg = 0.0;
  bool valid = false;
  std::vector<double> vertices;  ///< 24 numbers, NaN for pads not seen
  std::string failure;
};

/// Rectilinear joint grid; samples are stored row-major (pip outer).
struct CalibrationTable {
  std::vector<double> pip_axis;
  std::vector<double> dip_axis;
  std::vector<CalibrationSample> samples;
  double grid_step_deg = 0.0;
  RenderOptions render;
  PipelineOptions pipeline;

  const CalibrationSample& sample(std::size_t i, std::size_t j) const {
    return samples[i * dip_axis.size() + j];
  }
  std::size_t failures() const;
};

void validate(const CalibrationTable& table);

/// Called with the completed fraction after each PIP row; returning false
/// aborts the build with CancelledError.
using CalibrationProgress = std::function<bool(double)>;

/// Grid from 0 to each joint limit with the given spacing (limits included).
CalibrationTable build_calibration(const finger::FingerParams& params, double step_deg,
                                   const RenderOptions& render = {}, const PipelineOptions& pipeline = {},
                                   const CalibrationProgress& progress = {});
CalibrationTable build_calibration(const finger::FingerParams& params, std::vector<double> pip_axis,
                                   std::vector<double> dip_axis, const RenderOptions& render = {},
                                   const PipelineOptions& pipeline = {}, const CalibrationProgress& progress = {});

/// Smallest vertex-vector distance between two distinct valid samples.
double min_separation(const CalibrationTable& table);

struct JointEstimate {
  double pip_deg = 0.0;
  double dip_deg = 0.0;
  double confidence = 0.0;  ///< (pads used / 3) / (1 + rms feature residual)
  double distance = 0.0;    ///< rms residual, px
  std::size_t pads = 0;
  std::size_t nearest = 0;  ///< sample index of the nearest neighbour
};

/// Nearest neighbour in vertex space over the pads seen in both, then
/// bilinear interpolation inverted on whichever adjacent grid cell explains
/// the observation best (up to half a cell of extrapolation).
/// Throws FeatureError when fewer than two pads are seen.
JointEstimate estimate_joint_angles(const CalibrationTable& table, const std::vector<double>& vertex_vector);
JointEstimate estimate_joint_angles(const CalibrationTable& table, const RasterImage& img);

}  // namespace linkfold::perception
