#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "linkfold/design.hpp"
#include "linkfold/finger.hpp"
#include "linkfold/mechanism.hpp"
#include "linkfold/optics.hpp"
#include "linkfold/perception.hpp"

/// File formats of the workbench.
///
/// JSON documents carry `"format": 1` and a `"kind"` tag. Numbers are written
/// with 12 significant digits, so rewriting a parsed document reproduces it
/// byte for byte, and parsing a written document recovers every value to
/// within one unit in the 12th digit. Non-finite numbers are written as null.
/// Angles are stored in degrees. Readers report schema violations as
/// ValidationError carrying the JSON path of the offending field, and an
/// unsupported format as VersionError.
namespace linkfold::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;
inline constexpr int kSignificantDigits = 12;

/// Shortest form with at most 12 significant digits; "null" when non-finite.
std::string format_number(double v);

/// Serializes with 12 significant digits; arrays of scalars stay on one line.
std::string dump(const Json& doc);
/// Throws ValidationError on malformed JSON syntax.
Json parse(std::string_view text);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Checks `format` and `kind`, throwing VersionError / ValidationError.
void check_header(const Json& doc, std::string_view kind);
Json header(std::string_view kind);

// --- data model <-> JSON -------------------------------------------------------
// Readers take the path of `j` within its document for diagnostics.

Json to_json(const mech::MechanismGraph& mech);
mech::MechanismGraph mechanism_from_json(const Json& j, const std::string& path = "mechanism");

Json to_json(const finger::FingerParams& params);
finger::FingerParams finger_from_json(const Json& j, const std::string& path = "finger");

Json to_json(const optics::SceneTemplate& tpl);
optics::SceneTemplate scene_from_json(const Json& j, const std::string& path = "scene");

Json to_json(const finger::FingerConfig& config);
finger::FingerConfig config_from_json(const Json& j, const std::string& path = "config");

/// Solved finger: joint angles plus link poses keyed by link id.
Json to_json(const finger::FingerParams& params, const finger::FingerSolution& solution);
finger::FingerSolution solution_from_json(const Json& j, const finger::FingerParams& params,
                                          const std::string& path = "state");

Json to_json(const perception::RenderOptions& o);
perception::RenderOptions render_options_from_json(const Json& j, const std::string& path = "render");
Json to_json(const perception::PipelineOptions& o);
perception::PipelineOptions pipeline_options_from_json(const Json& j, const std::string& path = "pipeline");

Json to_json(const perception::CalibrationTable& table);
perception::CalibrationTable table_from_json(const Json& j, const std::string& path = "");

Json to_json(const perception::JointEstimate& e);

Json to_json(const finger::GraspObject& object);
finger::GraspObject object_from_json(const Json& j, const std::string& path = "object");
Json to_json(const finger::GraspOptions& o);
finger::GraspOptions grasp_options_from_json(const Json& j, const std::string& path = "options");
Json to_json(const finger::GraspTrace& trace);
finger::GraspTrace trace_from_json(const Json& j, const std::string& path = "");

Json to_json(const optics::RayPath& ray);
optics::RayPath ray_from_json(const Json& j, const std::string& path = "ray");
Json to_json(const std::vector<optics::RayPath>& rays);
std::vector<optics::RayPath> rays_from_json(const Json& j, const std::string& path = "");

/// `pixels` may be left out to keep the document small.
Json to_json(const optics::VisibilityReport& report, bool include_pixels = true);
optics::VisibilityReport visibility_from_json(const Json& j, const std::string& path = "");
Json to_json(const optics::CoverageSummary& summary);
optics::CoverageSummary coverage_from_json(const Json& j, const std::string& path = "");

Json to_json(const design::DesignResult& result);
design::DesignResult design_result_from_json(const Json& j, const std::string& path = "");

/// Design spaces are stored without their finger and scene; readers take
/// them from the enclosing project.
Json to_json(const design::LinkageDesignSpace& space);
design::LinkageDesignSpace linkage_space_from_json(const Json& j, const finger::FingerParams& base,
                                                   const std::string& path = "linkage_space");
Json to_json(const design::OpticsDesignSpace& space);
design::OpticsDesignSpace optics_space_from_json(const Json& j, const finger::FingerParams& finger,
                                                 const optics::SceneTemplate& scene,
                                                 const std::string& path = "optics_space");

// --- project ------------------------------------------------------------------

struct CalibrationRef {
  std::string table;          ///< table file, relative to the project; empty = build on demand
  double grid_step_deg = 3.0; ///< used when building on demand
};

struct ProjectFile {
  int format = kFormatVersion;
  std::string name = "project";
  finger::FingerParams finger;
  optics::SceneTemplate scene;
  CalibrationRef calibration;
  std::optional<design::LinkageDesignSpace> linkage_space;
  std::optional<design::OpticsDesignSpace> optics_space;
  std::filesystem::path base_dir;  ///< directory sub-files resolve against; not serialized
};

/// Reference finger, scene and both default design spaces.
ProjectFile reference_project();

Json to_json(const ProjectFile& project);
ProjectFile project_from_json(const Json& j);
/// Also checks that referenced sub-files exist.
ProjectFile load_project(const std::filesystem::path& path);
void save_project(const std::filesystem::path& path, const ProjectFile& project);
/// Loads the referenced table, or builds one at the reference grid step.
perception::CalibrationTable project_calibration(const ProjectFile& project);

// --- documents with headers ----------------------------------------------------

std::string write_document(std::string_view kind, Json body);
/// Parses, checks the header and returns the document (header included).
Json read_document(std::string_view text, std::string_view kind);

std::string write_table(const perception::CalibrationTable& table);
perception::CalibrationTable read_table(std::string_view text);
std::string write_trace(const finger::GraspTrace& trace);
finger::GraspTrace read_trace(std::string_view text);
std::string write_design_result(const design::DesignResult& result);
design::DesignResult read_design_result(std::string_view text);
std::string write_mechanism(const mech::MechanismGraph& mech);
mech::MechanismGraph read_mechanism(std::string_view text);
std::string write_scene(const optics::SceneTemplate& tpl);
optics::SceneTemplate read_scene(std::string_view text);
std::string write_rays(const std::vector<optics::RayPath>& rays);
std::vector<optics::RayPath> read_rays(std::string_view text);

// --- CSV ------------------------------------------------------------------------

struct SweepRow {
  double actuator_deg = 0.0;
  bool feasible = false;
  double pip_deg = 0.0;
  double dip_deg = 0.0;
  std::vector<double> transmission_deg;  ///< one per monitored pair
};

/// Unloaded actuator sweep from the lower stroke limit to full flexion.
std::vector<SweepRow> actuator_sweep(const finger::FingerParams& params, double step_deg);

/// Columns: actuator_deg, feasible, pip_deg, dip_deg, then mu_<joint>_deg
/// for each monitored transmission angle.
std::string sweep_csv(const finger::FingerParams& params, const std::vector<SweepRow>& rows);
/// Columns: step, actuator_deg, pip_deg, dip_deg, contact_proximal,
/// contact_intermediate, contact_distal, torque_nmm, min_clearance_mm.
std::string grasp_csv(const finger::GraspTrace& trace);

// --- raster -----------------------------------------------------------------------

/// Binary PGM (P5, maxval 255).
std::string write_pgm(const perception::RasterImage& img);
/// Accepts comments and arbitrary whitespace in the header. Throws
/// ValidationError on malformed input.
perception::RasterImage read_pgm(std::string_view bytes);

// --- SVG ----------------------------------------------------------------------------

struct SvgOptions {
  double scale = 4.0;    ///< px per mm
  double margin = 10.0;  ///< mm
  bool show_linkage = true;
  bool show_shells = true;
};

/// Finger at `config` with pads colored by phalanx (green proximal, blue
/// intermediate, red distal), the linkage bars in grey, and optionally the
/// optics scene and ray paths (one polyline each, in order).
std::string emit_svg(const finger::FingerParams& params, const finger::FingerConfig& config,
                     const optics::OpticsScene* scene = nullptr, const std::vector<optics::RayPath>& rays = {},
                     const SvgOptions& options = {});

/// Coverage heat map: one cell per configuration shaded by its worst pad.
std::string emit_coverage_svg(const optics::CoverageSummary& summary);

}  // namespace linkfold::io
