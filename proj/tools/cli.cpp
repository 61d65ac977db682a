#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "linkfold/design.hpp"
#include "linkfold/error.hpp"
#include "linkfold/finger.hpp"
#include "linkfold/io.hpp"
#include "linkfold/optics.hpp"
#include "linkfold/perception.hpp"

namespace linkfold::cli {

namespace {

using io::Json;

struct Common {
  std::string project;
  std::string out;
};

io::ProjectFile load(const Common& c) {
  return c.project.empty() ? io::reference_project() : io::load_project(c.project);
}

void emit(const Common& c, std::ostream& out, const std::string& bytes) {
  if (c.out.empty()) {
    out << bytes;
    out.flush();
  } else {
    io::write_text(c.out, bytes);
  }
}

Json solve_document(const finger::FingerParams& f, const finger::FingerSolution& sol) {
  Json body{{"state", io::to_json(f, sol)}};
  body["transmission_deg"] = Json::array();
  for (double t : mech::transmission_angles(f.mechanism, sol.state, f.mechanism.monitored()))
    body["transmission_deg"].push_back(t);
  return body;
}

/// "pad,t,radius_mm,depth"
perception::Imprint parse_imprint(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ValidationError("expected pad,t,radius_mm,depth", "imprint");
    }
  }
  if (v.size() != 4 || v[0] != std::floor(v[0])) throw ValidationError("expected pad,t,radius_mm,depth", "imprint");
  if (v[0] < 0 || v[0] > 2) throw ValidationError("pad must be 0, 1 or 2", "imprint.pad");
  return {static_cast<int>(v[0]), v[1], v[2], v[3]};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"linkfold: planar design workbench for mirror-sensorized underactuated fingers"};
  app.require_subcommand(1);
  Common c;
  const auto add_common = [&](CLI::App* s) {
    s->add_option("--project", c.project, "project file (defaults to the built-in reference project)");
    s->add_option("-o,--out", c.out, "output path (defaults to stdout)");
  };

  // solve
  double actuator = 0.0;
  std::optional<double> dip_opt;
  auto* solve = app.add_subcommand("solve", "solve the linkage at an actuator angle");
  add_common(solve);
  solve->add_option("--actuator-deg", actuator, "actuator angle")->required();
  solve->add_option("--dip-deg", dip_opt, "prescribe DIP instead of the unloaded spring rest");

  // sweep
  double sweep_step = 0.5;
  auto* sweep = app.add_subcommand("sweep", "unloaded actuator sweep as CSV");
  add_common(sweep);
  sweep->add_option("--step-deg", sweep_step, "actuator step")->check(CLI::PositiveNumber);

  // coverage
  double grid = 5.0;
  std::string svg_path;
  auto* coverage = app.add_subcommand("coverage", "per-pad visible fraction over the joint grid");
  add_common(coverage);
  coverage->add_option("--grid", grid, "grid step in degrees")->check(CLI::PositiveNumber);
  coverage->add_option("--svg", svg_path, "also write a coverage heat map");

  // optimizers
  std::size_t budget = 5000;
  std::uint64_t seed = 1;
  auto* opt_link = app.add_subcommand("optimize-linkage", "search pivot placements");
  auto* opt_optics = app.add_subcommand("optimize-optics", "search camera and mirror placements");
  for (auto* s : {opt_link, opt_optics}) {
    add_common(s);
    s->add_option("--budget", budget, "objective evaluations")->check(CLI::PositiveNumber);
    s->add_option("--seed", seed, "random seed");
  }

  // grasp
  std::optional<double> diameter;
  double center_x = 24.0;
  std::string object_path, trace_json;
  finger::GraspOptions gopts;
  gopts.torque_limit = 500.0;
  auto* grasp = app.add_subcommand("grasp", "quasi-static grasp trace as CSV");
  add_common(grasp);
  grasp->add_option("--diameter", diameter, "circle resting on the proximal pad, mm");
  grasp->add_option("--center-x", center_x, "circle centre along the proximal pad, mm");
  grasp->add_option("--object", object_path, "object JSON file instead of --diameter");
  grasp->add_option("--torque-limit", gopts.torque_limit, "N*mm")->check(CLI::PositiveNumber);
  grasp->add_option("--step-deg", gopts.step_deg, "actuator step")->check(CLI::PositiveNumber);
  grasp->add_option("--json", trace_json, "also write the full trace document");

  // render
  double pip = 0.0, dip = 0.0;
  std::vector<std::string> imprints;
  auto* render = app.add_subcommand("render", "synthetic tactile frame as binary PGM");
  add_common(render);
  render->add_option("--pip-deg", pip)->required();
  render->add_option("--dip-deg", dip)->required();
  render->add_option("--imprint", imprints, "pad,t,radius_mm,depth (repeatable)");

  // calibrate
  std::optional<double> cal_step;
  auto* calibrate = app.add_subcommand("calibrate", "lookup table over the joint grid");
  add_common(calibrate);
  calibrate->add_option("--step-deg", cal_step, "grid step (defaults to the project's)")->check(CLI::PositiveNumber);

  // estimate
  std::string table_path, image_path;
  auto* estimate = app.add_subcommand("estimate", "joint angles from a tactile frame");
  add_common(estimate);
  estimate->add_option("--table", table_path, "calibration table")->required();
  estimate->add_option("--image", image_path, "PGM frame")->required();

  // width
  std::optional<double> w_actuator, w_pip, w_dip;
  std::string w_trace;
  auto* width = app.add_subcommand("width", "object width from a joint configuration");
  add_common(width);
  width->add_option("--actuator-deg", w_actuator, "unloaded configuration at this actuator angle");
  width->add_option("--pip-deg", w_pip);
  width->add_option("--dip-deg", w_dip);
  width->add_option("--trace", w_trace, "final configuration of a grasp trace document");

  // init
  auto* init = app.add_subcommand("init", "write the reference project");
  add_common(init);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'linkfold --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (solve->parsed()) {
      const auto p = load(c);
      const auto sol = dip_opt ? finger::solve_actuated(p.finger, actuator, *dip_opt)
                               : finger::free_motion_solution(p.finger, actuator);
      emit(c, out, io::write_document("state", solve_document(p.finger, sol)));
    } else if (sweep->parsed()) {
      const auto p = load(c);
      emit(c, out, io::sweep_csv(p.finger, io::actuator_sweep(p.finger, sweep_step)));
    } else if (coverage->parsed()) {
      const auto p = load(c);
      const auto summary = optics::coverage_sweep(p.finger, p.scene, optics::square_grid(p.finger, grid));
      Json body = io::to_json(summary);
      body["grid_step_deg"] = grid;
      emit(c, out, io::write_document("coverage", std::move(body)));
      if (!svg_path.empty()) io::write_text(svg_path, io::emit_coverage_svg(summary));
      if (summary.feasible == 0) throw DomainError("no feasible configuration on the grid");
    } else if (opt_link->parsed() || opt_optics->parsed()) {
      const auto p = load(c);
      design::DesignResult r;
      if (opt_link->parsed()) {
        auto space = p.linkage_space.value_or(design::default_linkage_space());
        space.base = p.finger;
        r = design::optimize_linkage(space, budget, seed);
      } else {
        auto space = p.optics_space.value_or(design::default_optics_space(p.finger));
        space.finger = p.finger;
        r = design::optimize_optics(space, budget, seed);
      }
      emit(c, out, io::write_design_result(r));
      if (!r.feasible) {
        err << "no feasible design within the budget\n";
        return kExitInfeasible;
      }
    } else if (grasp->parsed()) {
      const auto p = load(c);
      finger::GraspObject obj;
      if (!object_path.empty()) {
        obj = io::object_from_json(io::parse(io::read_text(object_path)), "object");
      } else if (diameter) {
        if (!(*diameter > 0)) throw ValidationError("must be positive", "diameter");
        obj = finger::GraspObject::circle({center_x, *diameter / 2}, *diameter / 2);
      } else {
        throw ValidationError("either --diameter or --object is required", "object");
      }
      const auto trace = finger::simulate_grasp(p.finger, obj, gopts);
      emit(c, out, io::grasp_csv(trace));
      if (!trace_json.empty()) io::write_text(trace_json, io::write_trace(trace));
      if (trace.unreachable) {
        err << "the object was never touched\n";
        return kExitInfeasible;
      }
    } else if (render->parsed()) {
      const auto p = load(c);
      std::vector<perception::Imprint> im;
      for (const auto& s : imprints) im.push_back(parse_imprint(s));
      perception::RenderOptions o;
      o.scene = p.scene;
      emit(c, out, io::write_pgm(perception::synth_render(p.finger, pip, dip, im, o)));
    } else if (calibrate->parsed()) {
      const auto p = load(c);
      perception::RenderOptions o;
      o.scene = p.scene;
      emit(c, out, io::write_table(perception::build_calibration(p.finger, cal_step.value_or(p.calibration.grid_step_deg), o)));
    } else if (estimate->parsed()) {
      const auto table = io::read_table(io::read_text(table_path));
      const auto img = io::read_pgm(io::read_text(image_path));
      emit(c, out, io::write_document("joint_estimate", io::to_json(perception::estimate_joint_angles(table, img))));
    } else if (width->parsed()) {
      const auto p = load(c);
      finger::FingerConfig cfg;
      if (!w_trace.empty()) {
        cfg = io::read_trace(io::read_text(w_trace)).final_config;
      } else if (w_actuator) {
        cfg = finger::free_motion(p.finger, *w_actuator);
      } else if (w_pip && w_dip) {
        cfg = {0.0, *w_pip, *w_dip};
      } else {
        throw ValidationError("give --trace, --actuator-deg, or both --pip-deg and --dip-deg", "config");
      }
      const double w = finger::estimate_width(p.finger, cfg);
      emit(c, out, io::write_document("width", Json{{"config", io::to_json(cfg)}, {"width_mm", w}}));
    } else if (init->parsed()) {
      emit(c, out, io::dump(io::to_json(io::reference_project())));
    }
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const AssemblyError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const DomainError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ConvergenceError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const SingularityError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const GeometryError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const VisibilityError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const FeatureError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ConditioningError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace linkfold::cli
