#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "linkfold/finger.hpp"
#include "linkfold/optics.hpp"

/// Gradient-free design search: Latin-hypercube sampling followed by
/// coordinate descent on the best sample. Deterministic for a given seed and
/// budget regardless of the worker count.
namespace linkfold::design {

struct Bounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// Linkage candidates are the six moving-pivot positions F, E, G, G', D, C
/// (x then y, straight reference pose, world mm). Link lengths and the
/// fixed-pivot placement follow from them; a coordinate with lo == hi is held.
struct LinkageDesignSpace {
  finger::FingerParams base;  ///< phalanx dimensions and joint limits
  std::vector<Bounds> bounds;  ///< 12 entries
  std::optional<std::vector<double>> start;
  int dof_target = 2;
  double rom_target_deg = 90.0;
  double transmission_min_deg = 35.0;
  double transmission_max_deg = 145.0;
  double search_step_deg = 2.0;    ///< actuator step while searching
  double search_row_deg = 5.0;     ///< DIP row spacing while searching
  double verify_step_deg = 0.5;    ///< actuator step and row spacing for the incumbent
};

void validate(const LinkageDesignSpace& space);
LinkageDesignSpace default_linkage_space();

std::vector<std::string> linkage_parameter_names();
std::vector<double> linkage_parameters(const finger::LinkageGeometry& g);
finger::LinkageGeometry linkage_from_parameters(const std::vector<double>& x);

struct LinkageAudit {
  bool feasible = false;
  int dof = 0;
  double rom_pip_deg = 0.0;  ///< PIP reached on every DIP row
  double rom_dip_deg = 0.0;  ///< DIP rows fully traversed
  double margin_deg = 0.0;   ///< worst distance of a monitored angle inside the window
  double min_angle_deg = 0.0;
  double max_angle_deg = 0.0;
  bool monotone = false;     ///< actuator angle increases with PIP and with DIP
  std::string failure;
};

/// Sweeps the joint workspace row by row (fixed DIP, stepping the actuator)
/// and audits assembly, monotonicity and transmission angles. Resolution
/// defaults to the space's verification step.
LinkageAudit evaluate_linkage(const LinkageDesignSpace& space, const std::vector<double>& x,
                              std::optional<double> step_deg = std::nullopt,
                              std::optional<double> row_deg = std::nullopt);

/// Optics candidates: camera x, y, tilt (intermediate frame) followed by
/// the endpoints ax, ay, bx, by of every mirror in its phalanx frame.
struct OpticsDesignSpace {
  finger::FingerParams finger;
  optics::SceneTemplate base;  ///< fov, pixels, occluders; camera and mirrors are overwritten
  std::vector<finger::Phalanx> mirror_phalanges;
  std::vector<Bounds> bounds;  ///< 3 + 4 * mirrors
  std::optional<std::vector<double>> start;
  double target = 0.95;
  double grid_step_deg = 5.0;
  int search_pixels = 360;  ///< reduced ray count while searching
};

void validate(const OpticsDesignSpace& space);
OpticsDesignSpace default_optics_space(const finger::FingerParams& params);
/// Same space with the mirrors removed.
OpticsDesignSpace without_mirrors(const OpticsDesignSpace& space);

std::vector<std::string> optics_parameter_names(const OpticsDesignSpace& space);
std::vector<double> optics_parameters(const OpticsDesignSpace& space, const optics::SceneTemplate& tpl);
optics::SceneTemplate optics_template(const OpticsDesignSpace& space, const std::vector<double>& x);

struct OpticsAudit {
  double maximin = 0.0;
  std::array<double, 3> min{};
  std::array<double, 3> mean{};
  std::size_t configs = 0;
};

/// Full-resolution coverage on the space's grid.
OpticsAudit evaluate_optics(const OpticsDesignSpace& space, const std::vector<double>& x);

struct Constraint {
  std::string name;
  double value = 0.0;
  double margin = 0.0;  ///< >= 0 when satisfied
};

struct DesignResult {
  std::vector<std::string> names;
  std::vector<double> parameters;
  double objective = 0.0;
  bool feasible = false;
  bool exhausted = false;  ///< no feasible candidate within the budget
  std::vector<Constraint> audit;
  std::size_t evaluations = 0;
  double global_best_score = 0.0;  ///< search score of the best sample before refinement
  double refined_score = 0.0;
  bool cancelled = false;
};

/// Progress in [0, 1] reported after every batch; return false to cancel.
/// The incumbent is passed so callers can surface partial results.
using ProgressFn = std::function<bool(double progress, const DesignResult& incumbent)>;

DesignResult optimize_linkage(const LinkageDesignSpace& space, std::size_t budget, std::uint64_t seed,
                              const ProgressFn& progress = {});
DesignResult optimize_optics(const OpticsDesignSpace& space, std::size_t budget, std::uint64_t seed,
                             const ProgressFn& progress = {});

// --- generic search --------------------------------------------------------

struct Score {
  double score = -1e300;  ///< larger is better; ranks candidates
  bool feasible = false;
};

struct SearchResult {
  std::vector<double> best;
  Score best_score;
  double global_best_score = -1e300;
  std::size_t evaluations = 0;
  bool cancelled = false;
};

/// LHS over `bounds` (with an optional start point first), then
/// best-improvement coordinate descent with step halving from the best
/// sample. Batches are evaluated in parallel and reduced by (score, index).
SearchResult search(const std::vector<Bounds>& bounds, const std::optional<std::vector<double>>& start,
                    std::size_t budget, std::uint64_t seed, const std::function<Score(const std::vector<double>&)>& evaluate,
                    const std::function<bool(double, const std::vector<double>&, const Score&)>& progress = {});

}  // namespace linkfold::design
