#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "linkfold/error.hpp"
#include "linkfold/geometry.hpp"

/// General planar linkage kinematics built from rigid links and revolute joints.
///
/// Link pivots are given in link-local coordinates. Each link also carries a
/// reference pose; the reference assembly (all links at their reference pose)
/// must close, and it fixes the assembly branch used when no warm start is
/// supplied. Angles are radians throughout this module.
namespace linkfold::mech {

struct Pivot {
  std::string name;
  Vec2 local{};
};

struct LinkBody {
  std::string id;
  std::vector<Pivot> pivots;
  bool is_ground = false;
  Pose2 reference{};

  const Pivot* find(std::string_view name) const;
};

struct PivotRef {
  std::string link;
  std::string pivot;
  friend bool operator==(const PivotRef&, const PivotRef&) = default;
};

struct RevoluteJoint {
  std::string id;
  PivotRef a;
  PivotRef b;
};

/// Prescribes the relative rotation (angle of link b minus angle of link a)
/// at a joint.
struct Driver {
  std::string name;
  std::string joint;
};

/// Required orientation sign of the triangle formed by three pivots.
struct BranchFlag {
  std::array<PivotRef, 3> points;
  int sign = 1;
};

/// A monitored transmission angle: at `joint`, the angle between the
/// directions toward `far_a` and `far_b` (one pivot on each coupled link).
struct TransmissionPair {
  std::string joint;
  PivotRef far_a;
  PivotRef far_b;
};

using DriverValues = std::map<std::string, double>;

struct MobilityReport {
  int links = 0;
  int lower_pairs = 0;
  int higher_pairs = 0;
  int dof = 0;
};

class MechanismGraph {
 public:
  MechanismGraph() = default;
  /// Validates structure; throws ValidationError on malformed input.
  MechanismGraph(std::vector<LinkBody> links, std::vector<RevoluteJoint> joints,
                 std::vector<Driver> drivers, std::vector<BranchFlag> branch_flags = {},
                 std::vector<TransmissionPair> monitored = {});

  const std::vector<LinkBody>& links() const { return links_; }
  const std::vector<RevoluteJoint>& joints() const { return joints_; }
  const std::vector<Driver>& drivers() const { return drivers_; }
  const std::vector<BranchFlag>& branch_flags() const { return branch_flags_; }
  const std::vector<TransmissionPair>& monitored() const { return monitored_; }

  std::size_t ground_index() const { return ground_; }
  std::size_t link_index(std::string_view id) const;
  std::size_t joint_index(std::string_view id) const;
  bool has_link(std::string_view id) const;
  bool has_joint(std::string_view id) const;
  Vec2 pivot_local(const PivotRef& ref) const;

  /// Same structure with a different set of driven joints.
  MechanismGraph with_drivers(std::vector<Driver> drivers) const;
  MechanismGraph with_monitored(std::vector<TransmissionPair> monitored) const;

  /// Independent loops as joint-id sequences (fundamental cycles), used
  /// to name failing loops in diagnostics.
  const std::vector<std::vector<std::string>>& loops() const { return loops_; }
  const std::vector<std::string>& loop_containing(std::string_view joint) const;

 private:
  void validate_and_index();

  std::vector<LinkBody> links_;
  std::vector<RevoluteJoint> joints_;
  std::vector<Driver> drivers_;
  std::vector<BranchFlag> branch_flags_;
  std::vector<TransmissionPair> monitored_;
  std::size_t ground_ = 0;
  std::unordered_map<std::string, std::size_t> link_index_;
  std::unordered_map<std::string, std::size_t> joint_index_;
  std::vector<std::vector<std::string>> loops_;
};

/// Link poses of an assembled mechanism, indexed like MechanismGraph::links().
struct MechanismState {
  std::vector<Pose2> poses;
  double residual = 0.0;  ///< max joint coincidence error, mm

  const Pose2& pose(const MechanismGraph& mech, std::string_view link) const;
  Vec2 pivot_world(const MechanismGraph& mech, const PivotRef& ref) const;
};

struct SolverOptions {
  double position_tolerance = 1e-6;  ///< mm, acceptance threshold
  int max_iterations = 100;
  double initial_damping = 1e-10;
  double continuation_step = deg2rad(5.0);
};

MobilityReport mobility(const MechanismGraph& mech);

/// Reference assembly (every link at its reference pose).
MechanismState reference_state(const MechanismGraph& mech);

/// Relative joint angles of the mechanism's drivers in `state`.
DriverValues driver_values(const MechanismGraph& mech, const MechanismState& state);

/// Maximum joint coincidence error of `state`.
double closure_residual(const MechanismGraph& mech, const MechanismState& state);

/// True when every branch flag holds in `state`.
bool branch_flags_hold(const MechanismGraph& mech, const MechanismState& state);

/// Solves loop closure for the given driver values. With a warm start the
/// assembly branch continuous with it is returned; otherwise the branch of
/// the reference assembly, as fixed by the branch flags.
MechanismState solve_position(const MechanismGraph& mech, const DriverValues& driven,
                              const MechanismState* warm_start = nullptr,
                              const SolverOptions& options = {});

/// Closed-form solve by successive circle-circle (RRR dyad) constructions.
/// Returns nullopt when the mechanism does not decompose into dyads under
/// its current drivers. Throws AssemblyError when a dyad cannot close.
std::optional<MechanismState> solve_dyadic(const MechanismGraph& mech, const DriverValues& driven,
                                           const MechanismState* hint = nullptr);

struct KinematicDerivatives {
  std::vector<double> angular_velocity;      ///< rad/s per link
  std::vector<double> angular_acceleration;  ///< rad/s^2 per link
  /// Per link, per pivot (same order as LinkBody::pivots).
  std::vector<std::vector<Vec2>> pivot_velocity;
  std::vector<std::vector<Vec2>> pivot_acceleration;

  double omega(const MechanismGraph& mech, std::string_view link) const;
  Vec2 velocity(const MechanismGraph& mech, const PivotRef& ref) const;
};

KinematicDerivatives kinematic_derivatives(const MechanismGraph& mech, const MechanismState& state,
                                           const DriverValues& driver_rates,
                                           const DriverValues& driver_accels = {});

/// Unsigned transmission angles (degrees, [0, 180]) for the given pairs.
std::vector<double> transmission_angles(const MechanismGraph& mech, const MechanismState& state,
                                        const std::vector<TransmissionPair>& pairs);

struct SweepEntry {
  bool feasible = false;
  MechanismState state;
  std::vector<double> transmission_deg;  ///< for mech.monitored()
  std::string error;
};

/// Solves each grid point, warm-starting from the previous feasible state.
/// Infeasible points are marked rather than aborting; only a failure at the
/// first point throws.
std::vector<SweepEntry> sweep(const MechanismGraph& mech, const std::vector<DriverValues>& grid,
                              const SolverOptions& options = {});

}  // namespace linkfold::mech
