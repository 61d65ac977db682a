#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "linkfold/mechanism.hpp"

/// The three-phalanx finger: geometry, spring-loaded DIP underactuation,
/// quasi-static grasping and object-width estimation.
///
/// Phalanx frames: the proximal frame is the world frame with its pad on
/// y = 0 from O to A; the intermediate frame sits at A rotated by PIP and
/// the distal frame at B rotated by PIP + DIP. Pads face +y; the hollow
/// phalanx interiors lie at -shell_depth <= y < 0. Degrees at this surface.
namespace linkfold::finger {

enum class Phalanx { proximal = 0, intermediate = 1, distal = 2 };
inline constexpr std::array<Phalanx, 3> kPhalanges{Phalanx::proximal, Phalanx::intermediate, Phalanx::distal};
const char* phalanx_name(Phalanx p);

struct SpringParams {
  double stiffness = 50.0;  ///< N·mm/rad
  double rest_deg = 0.0;
};

/// Driver names used by every finger mechanism.
inline constexpr const char* kActuator = "actuator";
inline constexpr const char* kPip = "pip";
inline constexpr const char* kDip = "dip";

struct FingerParams {
  double proximal_length = 35.0;
  double intermediate_length = 23.0;
  double distal_length = 32.0;
  double pad_width = 24.0;
  double shell_depth = 28.0;  ///< depth of the hollow interior behind each pad
  /// Drivers: `actuator` at actuator_joint and `dip` at dip_joint.
  mech::MechanismGraph mechanism;
  SpringParams spring;
  double stroke_min_deg = 0.0;
  double stroke_max_deg = 0.0;
  double pip_max_deg = 90.0;
  double dip_max_deg = 90.0;
  std::string actuator_joint = "F";
  std::string pip_joint = "A";
  std::string dip_joint = "B";
  std::string proximal_link = "proximal";
  std::string intermediate_link = "intermediate";
  std::string distal_link = "distal";
  std::map<std::string, mech::PivotRef> labels;  ///< O, A, B, C, D, E, F, G, G', T'

  double length(Phalanx p) const;
};

/// Throws ValidationError when the parameters are inconsistent.
void validate(const FingerParams& params);

struct FingerConfig {
  double actuator_deg = 0.0;
  double pip_deg = 0.0;
  double dip_deg = 0.0;
};

/// Pivot positions of the linkage in the straight reference pose (world mm).
struct LinkageGeometry {
  Vec2 F, E, G, Gp, D, C;
};

/// GelLink topology: ground proximal phalanx (O, A, F, G), actuation bar EF,
/// ternary coupler E-G'-D, bar GG', bar DC, intermediate (A, B), distal
/// (B, C, T'). Seven links, eight revolute joints. The actuator orientation
/// is chosen so that a positive actuator angle flexes the PIP joint.
mech::MechanismGraph build_gellink_mechanism(const LinkageGeometry& g, double proximal, double intermediate,
                                             double distal);
LinkageGeometry linkage_geometry(const FingerParams& params);

/// Reference design shipped with the workbench.
FingerParams default_gellink();
/// Same finger dimensions with a different linkage.
FingerParams make_finger(const LinkageGeometry& g, const FingerParams& base = {});

struct PhalanxPoses {
  std::array<Pose2, 3> frames;
  std::array<Segment, 3> pads;  ///< OA, AB, BT'
};

PhalanxPoses forward_kinematics(const FingerParams& params, const FingerConfig& config);
PhalanxPoses forward_kinematics(const FingerParams& params, double pip_deg, double dip_deg);

/// Outline segments of the hollow shells (dorsal walls, end walls, and the
/// opaque covers bridging the joints).
std::vector<Segment> shell_segments(const FingerParams& params, const PhalanxPoses& poses);

struct FingerSolution {
  FingerConfig config;
  mech::MechanismState state;
};

FingerConfig config_from_state(const FingerParams& params, const mech::MechanismState& state);
/// Linkage solved with the actuator and DIP prescribed.
FingerSolution solve_actuated(const FingerParams& params, double actuator_deg, double dip_deg,
                              const mech::MechanismState* warm = nullptr);
/// Linkage solved with the actuator prescribed and PIP held.
FingerSolution solve_pip_locked(const FingerParams& params, double actuator_deg, double pip_deg,
                                const mech::MechanismState* warm = nullptr);
/// Linkage solved from both joint angles (actuator follows).
FingerSolution solve_joints(const FingerParams& params, double pip_deg, double dip_deg,
                            const mech::MechanismState* warm = nullptr);

/// Actuator angle at full flexion of both joints.
double full_stroke_deg(const FingerParams& params);

/// Unloaded motion: the spring holds DIP at rest while PIP follows the
/// actuator; beyond the PIP stop, further actuation deflects DIP.
FingerSolution free_motion_solution(const FingerParams& params, double actuator_deg,
                                    const mech::MechanismState* warm = nullptr);
FingerConfig free_motion(const FingerParams& params, double actuator_deg);

struct GraspObject {
  enum class Shape { circle, polygon };
  Shape shape = Shape::circle;
  Vec2 center{};
  double radius = 0.0;
  std::vector<Vec2> vertices;  ///< convex, counterclockwise

  static GraspObject circle(Vec2 center, double radius);
  static GraspObject polygon(std::vector<Vec2> vertices);
};

void validate(const GraspObject& object);
/// Euclidean distance from the object to a segment; negative penetration
/// depth when they overlap.
double signed_distance(const GraspObject& object, const Segment& segment);

struct GraspStep {
  double actuator_deg = 0.0;
  double pip_deg = 0.0;
  double dip_deg = 0.0;
  std::array<bool, 3> contact{};
  double torque = 0.0;        ///< actuator torque, N·mm
  double min_clearance = 0.0; ///< smallest signed pad distance, mm
};

struct ContactEvent {
  std::size_t step = 0;
  Phalanx phalanx = Phalanx::proximal;
  double actuator_deg = 0.0;
};

enum class GraspTermination { all_contacts, torque_limit, joint_limit, stroke_end };
const char* termination_name(GraspTermination t);

struct GraspTrace {
  std::vector<GraspStep> steps;
  std::vector<ContactEvent> events;
  FingerConfig final_config;
  std::array<bool, 3> contacts{};
  double torque = 0.0;
  GraspTermination termination = GraspTermination::stroke_end;
  bool unreachable = false;  ///< no pad ever touched the object
};

struct GraspOptions {
  double torque_limit = 1000.0;  ///< N·mm
  double step_deg = 0.25;
};

GraspTrace simulate_grasp(const FingerParams& params, const GraspObject& object, const GraspOptions& options = {});

/// Diameter of the circle tangent to the three pad lines on the pad side.
double estimate_width(const FingerParams& params, const FingerConfig& config);
double estimate_width(const std::array<Segment, 3>& pads);

}  // namespace linkfold::finger
