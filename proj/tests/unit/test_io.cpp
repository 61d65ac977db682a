#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <regex>
#include <string>

#include "linkfold/error.hpp"
#include "linkfold/io.hpp"

using namespace linkfold;
using io::Json;

namespace {

std::string field_path_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.field_path();
  }
  return "<no error>";
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

const io::ProjectFile& reference() {
  static const io::ProjectFile p = io::reference_project();
  return p;
}

perception::CalibrationTable synthetic_table() {
  perception::CalibrationTable t;
  t.grid_step_deg = 3.0;
  for (int k = 0; k <= 30; ++k) {
    t.pip_axis.push_back(3.0 * k);
    t.dip_axis.push_back(3.0 * k);
  }
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> px(0, 1439);
  for (double p : t.pip_axis)
    for (double d : t.dip_axis) {
      perception::CalibrationSample s;
      s.pip_deg = p;
      s.dip_deg = d;
      s.valid = true;
      for (int i = 0; i < 24; ++i) s.vertices.push_back(px(rng));
      t.samples.push_back(s);
    }
  // One sample that lost its distal pad.
  auto& bad = t.samples[17];
  bad.valid = false;
  bad.failure = "distal pad not found";
  for (int i = 16; i < 24; ++i) bad.vertices[i] = std::nan("");
  return t;
}

}  // namespace

TEST_CASE("numbers: twelve significant digits, shortest form") {
  CHECK(io::format_number(0.1) == "0.1");
  CHECK(io::format_number(1.0 / 3.0) == "0.333333333333");
  CHECK(io::format_number(30.0) == "30");
  CHECK(io::format_number(-0.0) == "0");
  CHECK(io::format_number(-1e300) == "-1e+300");
  CHECK(io::format_number(123456789012345.0) == "1.23456789012e+14");
  CHECK(io::format_number(std::nan("")) == "null");
  CHECK(io::format_number(INFINITY) == "null");
  // Parsing a 12-digit decimal and printing it again is the identity.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-1e3, 1e3);
  for (int i = 0; i < 2000; ++i) {
    const std::string s = io::format_number(U(rng));
    CHECK(io::format_number(std::stod(s)) == s);
  }
}

TEST_CASE("dump: stable layout and parse errors") {
  const Json j{{"b", 1}, {"a", Json::array({1.5, 2, nullptr})}, {"o", Json::object()}, {"s", "x\"y"}};
  CHECK(io::dump(j) == "{\n  \"b\": 1,\n  \"a\": [1.5, 2, null],\n  \"o\": {},\n  \"s\": \"x\\\"y\"\n}\n");
  CHECK(io::dump(io::parse(io::dump(j))) == io::dump(j));
  CHECK_THROWS_AS(io::parse("{\"a\": "), ValidationError);
}

TEST_CASE("project: reference round trip") {
  const std::string text = io::dump(io::to_json(reference()));
  const auto back = io::project_from_json(io::parse(text));
  CHECK(io::dump(io::to_json(back)) == text);
  CHECK(back.name == reference().name);
  CHECK(back.linkage_space.has_value());
  CHECK(back.optics_space.has_value());
  CHECK(back.finger.proximal_length == reference().finger.proximal_length);
  CHECK(back.finger.labels == reference().finger.labels);
  CHECK(back.scene.camera_tilt_deg == doctest::Approx(reference().scene.camera_tilt_deg).epsilon(1e-11));
  REQUIRE(back.finger.mechanism.links().size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto& a = back.finger.mechanism.links()[i];
    const auto& b = reference().finger.mechanism.links()[i];
    CHECK(a.id == b.id);
    REQUIRE(a.pivots.size() == b.pivots.size());
    for (std::size_t k = 0; k < a.pivots.size(); ++k) {
      CHECK(std::abs(a.pivots[k].local.x - b.pivots[k].local.x) <= 1e-10);
      CHECK(std::abs(a.pivots[k].local.y - b.pivots[k].local.y) <= 1e-10);
    }
  }
  // The re-read finger behaves like the original.
  const auto c0 = finger::free_motion(reference().finger, 30.0);
  const auto c1 = finger::free_motion(back.finger, 30.0);
  CHECK(c1.pip_deg == doctest::Approx(c0.pip_deg).epsilon(1e-8));
  CHECK(c1.dip_deg == doctest::Approx(c0.dip_deg).epsilon(1e-8));
}

TEST_CASE("project: shipped file matches the reference design") {
  const auto path = std::filesystem::path(LINKFOLD_DATA_DIR) / "reference_project.json";
  REQUIRE(std::filesystem::exists(path));
  const auto p = io::load_project(path);
  CHECK(io::dump(io::to_json(p)) == io::read_text(path));
  CHECK(io::read_text(path) == io::dump(io::to_json(reference())));
}

TEST_CASE("project: version and schema diagnostics") {
  Json doc = io::to_json(reference());
  SUBCASE("unknown version") {
    doc["format"] = 2;
    CHECK_THROWS_AS(io::project_from_json(doc), VersionError);
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "format");
  }
  SUBCASE("missing version") {
    doc.erase("format");
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "format");
  }
  SUBCASE("wrong kind") {
    doc["kind"] = "grasp_trace";
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "kind");
  }
  SUBCASE("corrupted number") {
    doc["finger"]["proximal_length"] = "long";
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "finger.proximal_length");
  }
  SUBCASE("corrupted nested pivot") {
    doc["finger"]["mechanism"]["links"][1]["pivots"][0]["local"] = Json::array({1.0});
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "finger.mechanism.links[1].pivots[0].local");
  }
  SUBCASE("semantic violation inside the finger") {
    doc["finger"]["pad_width"] = -1.0;
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "finger.pad_width");
  }
  SUBCASE("unknown pivot in a joint") {
    doc["finger"]["mechanism"]["joints"][0]["a"]["pivot"] = "nowhere";
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "finger.mechanism.joints[0].a.pivot");
  }
  SUBCASE("scene fov out of range") {
    doc["scene"]["fov_deg"] = 200.0;
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "scene.fov_deg");
  }
  SUBCASE("unknown phalanx") {
    doc["scene"]["mirrors"][0]["phalanx"] = "thumb";
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "scene.mirrors[0].phalanx");
  }
  SUBCASE("design space bounds") {
    doc["linkage_space"]["bounds"].erase(0);
    CHECK(field_path_of([&] { io::project_from_json(doc); }) == "linkage_space.bounds");
  }
  SUBCASE("missing calibration file") {
    doc["calibration"]["table"] = "does-not-exist.json";
    const auto dir = std::filesystem::temp_directory_path() / "linkfold_io_test";
    std::filesystem::create_directories(dir);
    io::write_text(dir / "p.json", io::dump(doc));
    CHECK(field_path_of([&] { io::load_project(dir / "p.json"); }) == "calibration.table");
  }
}

TEST_CASE("calibration table: 961 samples round trip exactly") {
  const auto t = synthetic_table();
  REQUIRE(t.samples.size() == 961);
  const std::string text = io::write_table(t);
  const auto back = io::read_table(text);
  CHECK(io::write_table(back) == text);
  CHECK(back.pip_axis == t.pip_axis);
  CHECK(back.dip_axis == t.dip_axis);
  REQUIRE(back.samples.size() == 961);
  for (std::size_t i = 0; i < 961; ++i) {
    CHECK(back.samples[i].valid == t.samples[i].valid);
    for (std::size_t k = 0; k < 24; ++k) {
      const double a = back.samples[i].vertices[k], b = t.samples[i].vertices[k];
      CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
    }
  }
  CHECK(back.samples[17].failure == "distal pad not found");
  CHECK(back.render.reflectance == t.render.reflectance);
  CHECK(back.pipeline.min_area == t.pipeline.min_area);

  Json doc = io::parse(text);
  doc["samples"][5]["vertices"].erase(0);
  CHECK(field_path_of([&] { io::table_from_json(doc); }) == "samples[5].vertices");
  doc = io::parse(text);
  doc["samples"][9]["valid"] = 1;
  CHECK(field_path_of([&] { io::table_from_json(doc); }) == "samples[9].valid");
  doc = io::parse(text);
  doc["render"]["reflectance"] = 0.0;
  CHECK(field_path_of([&] { io::table_from_json(doc); }) == "render.reflectance");
}

TEST_CASE("grasp trace and CSV") {
  const auto& f = reference().finger;
  const auto trace = finger::simulate_grasp(f, finger::GraspObject::circle({40.0, 32.0}, 22.6));
  const std::string text = io::write_trace(trace);
  const auto back = io::read_trace(text);
  CHECK(io::write_trace(back) == text);
  CHECK(back.steps.size() == trace.steps.size());
  CHECK(back.events.size() == trace.events.size());
  CHECK(back.termination == trace.termination);
  CHECK(back.contacts == trace.contacts);

  const std::string csv = io::grasp_csv(trace);
  CHECK(csv.starts_with("step,actuator_deg,pip_deg,dip_deg,contact_proximal,contact_intermediate,contact_distal,"
                        "torque_nmm,min_clearance_mm\n"));
  CHECK(count_of(csv, "\n") == trace.steps.size() + 1);
  CHECK_THROWS_AS(io::read_trace(io::write_table(synthetic_table())), ValidationError);
}

TEST_CASE("sweep CSV covers the full stroke in degrees") {
  const auto& f = reference().finger;
  const auto rows = io::actuator_sweep(f, 1.0);
  REQUIRE(rows.size() >= 2);
  CHECK(rows.front().actuator_deg == f.stroke_min_deg);
  CHECK(rows.back().actuator_deg == f.stroke_max_deg);
  for (const auto& r : rows) {
    CHECK(r.feasible);
    CHECK(r.transmission_deg.size() == f.mechanism.monitored().size());
    CHECK(r.pip_deg <= f.pip_max_deg + 1e-6);
  }
  CHECK(rows.back().pip_deg == doctest::Approx(f.pip_max_deg).epsilon(1e-6));
  CHECK(rows.back().dip_deg == doctest::Approx(f.dip_max_deg).epsilon(1e-6));
  const std::string csv = io::sweep_csv(f, rows);
  const std::string head = csv.substr(0, csv.find('\n'));
  CHECK(head.starts_with("actuator_deg,feasible,pip_deg,dip_deg,mu_"));
  CHECK(count_of(head, ",") == 3 + f.mechanism.monitored().size());
  CHECK(count_of(csv, "\n") == rows.size() + 1);
  CHECK_THROWS_AS(io::actuator_sweep(f, 0.0), ValidationError);
}

TEST_CASE("design result round trip keeps sentinels") {
  design::DesignResult r;
  r.names = {"a", "b"};
  r.parameters = {1.25, -3.0};
  r.objective = 0.981666666667;
  r.feasible = true;
  r.evaluations = 5000;
  r.global_best_score = -1e300;
  r.refined_score = std::nan("");
  r.audit = {{"maximin", 0.98, 0.03}};
  const std::string text = io::write_design_result(r);
  const auto back = io::read_design_result(text);
  CHECK(io::write_design_result(back) == text);
  CHECK(back.parameters == r.parameters);
  CHECK(back.global_best_score == -1e300);
  CHECK(std::isnan(back.refined_score));
  CHECK(back.audit.size() == 1);
  CHECK(back.evaluations == 5000);

  Json doc = io::parse(text);
  doc["parameters"].push_back(1.0);
  CHECK(field_path_of([&] { io::design_result_from_json(doc); }) == "parameters");
  doc = io::parse(text);
  doc["evaluations"] = -1;
  CHECK(field_path_of([&] { io::design_result_from_json(doc); }) == "evaluations");
}

TEST_CASE("mechanism, scene, solution and rays round trip") {
  const auto& f = reference().finger;
  const std::string m = io::write_mechanism(f.mechanism);
  CHECK(io::write_mechanism(io::read_mechanism(m)) == m);
  CHECK(mech::mobility(io::read_mechanism(m)).dof == 2);

  const std::string s = io::write_scene(reference().scene);
  CHECK(io::write_scene(io::read_scene(s)) == s);

  const auto sol = finger::free_motion_solution(f, 30.0);
  const Json sj = io::to_json(f, sol);
  const auto sb = io::solution_from_json(sj, f);
  CHECK(io::dump(io::to_json(f, sb)) == io::dump(sj));
  CHECK(sb.config.pip_deg == doctest::Approx(sol.config.pip_deg).epsilon(1e-11));
  CHECK(sj["pads"].size() == 3);

  const auto scene = optics::build_scene(f, reference().scene, 30.0, 40.0);
  std::vector<optics::RayPath> rays;
  for (int px = 0; px < scene.camera.pixels; px += 97) rays.push_back(optics::trace_ray(scene, px));
  const std::string r = io::write_rays(rays);
  const auto rb = io::read_rays(r);
  CHECK(io::write_rays(rb) == r);
  REQUIRE(rb.size() == rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    CHECK(rb[i].terminal == rays[i].terminal);
    CHECK(rb[i].vertices.size() == rays[i].vertices.size());
    CHECK(rb[i].mirrors == rays[i].mirrors);
  }
}

TEST_CASE("visibility and coverage round trip") {
  const auto& p = reference();
  const auto scene = optics::build_scene(p.finger, p.scene, 0.0, 0.0);
  const auto v = optics::visibility(scene, 1);
  const Json vj = io::to_json(v);
  const auto vb = io::visibility_from_json(vj);
  CHECK(io::dump(io::to_json(vb)) == io::dump(vj));
  CHECK(vb.pixels.size() == v.pixels.size());
  CHECK(vj["min_fraction"].get<double>() == doctest::Approx(v.min_fraction()).epsilon(1e-11));
  CHECK_FALSE(io::to_json(v, false).contains("pixels"));

  const auto cov = optics::coverage_sweep(p.finger, p.scene, {{0.0, 0.0}, {45.0, 45.0}, {90.0, 90.0}, {95.0, 0.0}});
  const Json cj = io::to_json(cov);
  CHECK(io::dump(io::to_json(io::coverage_from_json(cj))) == io::dump(cj));
  const std::string svg = io::emit_coverage_svg(cov);
  CHECK(count_of(svg, "class=\"cell\"") == 4);
  CHECK(count_of(svg, "fill=\"#ff00ff\"") == 1);
  CHECK(io::emit_coverage_svg(cov) == svg);
}

TEST_CASE("PGM is bit exact and strict") {
  perception::RasterImage img(17, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 37);
  const std::string bytes = io::write_pgm(img);
  CHECK(bytes.starts_with("P5\n17 5\n255\n"));
  CHECK(io::read_pgm(bytes) == img);
  CHECK(io::write_pgm(io::read_pgm(bytes)) == bytes);

  const std::string commented = "P5\n# made by hand\n17  5\n# depth\n255\n" + bytes.substr(12);
  CHECK(io::read_pgm(commented) == img);
  CHECK(field_path_of([&] { io::read_pgm(bytes.substr(0, bytes.size() - 1)); }) == "pgm.data");
  CHECK(field_path_of([&] { io::read_pgm("P2\n1 1\n255\n0"); }) == "pgm.magic");
  CHECK(field_path_of([&] { io::read_pgm("P5\n1 1\n65535\n\0\0"); }) == "pgm.maxval");
  CHECK(field_path_of([&] { io::read_pgm("P5\nx 1\n255\n\0"); }) == "pgm.width");
}

TEST_CASE("SVG: straight finger, colors, rays, determinism") {
  const auto& f = reference().finger;
  const std::string svg = io::emit_svg(f, {0.0, 0.0, 0.0});
  CHECK(svg == io::emit_svg(f, {0.0, 0.0, 0.0}));
  CHECK(count_of(svg, "class=\"pad\"") == 3);
  const std::regex pad_re(
      "class=\"pad\" data-phalanx=\"(\\w+)\" stroke=\"(#[0-9a-f]+)\"[^/]* y1=\"([-0-9.]+)\"[^/]* y2=\"([-0-9.]+)\"");
  std::vector<std::string> ys;
  std::map<std::string, std::string> colors;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), pad_re); it != std::sregex_iterator(); ++it) {
    colors[(*it)[1]] = (*it)[2];
    ys.push_back((*it)[3]);
    ys.push_back((*it)[4]);
  }
  REQUIRE(ys.size() == 6);
  for (const auto& y : ys) CHECK(y == ys.front());  // collinear on one horizontal line
  CHECK(colors["proximal"] == "#2ca02c");
  CHECK(colors["intermediate"] == "#1f77b4");
  CHECK(colors["distal"] == "#d62728");

  const auto scene = optics::build_scene(f, reference().scene, 20.0, 30.0);
  std::vector<optics::RayPath> rays;
  for (int px = 0; px < scene.camera.pixels; px += 180) rays.push_back(optics::trace_ray(scene, px));
  const std::string traced = io::emit_svg(f, {0.0, 20.0, 30.0}, &scene, rays);
  const std::regex ray_re("class=\"ray\" data-index=\"(\\d+)\"[^>]* points=\"([^\"]*)\"");
  std::size_t n = 0;
  for (auto it = std::sregex_iterator(traced.begin(), traced.end(), ray_re); it != std::sregex_iterator(); ++it, ++n) {
    const auto idx = std::stoul((*it)[1]);
    CHECK(idx == n);
    const std::string pts = (*it)[2];
    CHECK(count_of(pts, " ") + 1 == rays[idx].vertices.size());
  }
  CHECK(n == rays.size());
  CHECK(count_of(traced, "class=\"mirror\"") == scene.mirrors.size());
}
