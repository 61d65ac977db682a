#include "linkfold/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "linkfold/error.hpp"

namespace linkfold::io {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string child(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string item(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

/// Read cursor: a JSON value and its path in the document.
class In {
 public:
  In(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(what, path_.empty() ? "(document)" : path_);
  }
  const std::string& path() const { return path_; }
  const Json& json() const { return *j_; }
  bool is_null() const { return j_->is_null(); }

  void require_object() const {
    if (!j_->is_object()) fail("expected object");
  }
  bool has(std::string_view key) const {
    require_object();
    return j_->contains(key);
  }
  In at(std::string_view key) const {
    require_object();
    auto it = j_->find(key);
    if (it == j_->end()) In(*j_, child(path_, key)).fail("missing field");
    return In(*it, child(path_, key));
  }
  std::optional<In> maybe(std::string_view key) const {
    require_object();
    auto it = j_->find(key);
    if (it == j_->end() || it->is_null()) return std::nullopt;
    return In(*it, child(path_, key));
  }
  std::size_t size() const {
    if (!j_->is_array()) fail("expected array");
    return j_->size();
  }
  std::size_t size(std::size_t expected) const {
    const std::size_t n = size();
    if (n != expected) fail("expected " + std::to_string(expected) + " elements, got " + std::to_string(n));
    return n;
  }
  In operator[](std::size_t i) const { return In((*j_)[i], item(path_, i)); }

  double nullable() const {
    if (j_->is_null()) return kNaN;
    if (!j_->is_number()) fail("expected number");
    return j_->get<double>();
  }
  double num() const {
    const double v = nullable();
    if (!std::isfinite(v)) fail("expected finite number");
    return v;
  }
  std::int64_t integer(std::int64_t lo = std::numeric_limits<int>::min(),
                       std::int64_t hi = std::numeric_limits<int>::max()) const {
    if (!j_->is_number_integer()) fail("expected integer");
    if (j_->is_number_unsigned() && j_->get<std::uint64_t>() > static_cast<std::uint64_t>(hi)) fail("out of range");
    const auto v = j_->get<std::int64_t>();
    if (v < lo || v > hi) fail("out of range");
    return v;
  }
  std::uint64_t u64() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<std::int64_t>() >= 0))
      fail("expected non-negative integer");
    return j_->get<std::uint64_t>();
  }
  std::size_t count() const { return static_cast<std::size_t>(u64()); }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected boolean");
    return j_->get<bool>();
  }
  std::string str() const {
    if (!j_->is_string()) fail("expected string");
    return j_->get<std::string>();
  }
  Vec2 vec() const {
    size(2);
    return {(*this)[0].num(), (*this)[1].num()};
  }
  std::vector<double> nums() const {
    std::vector<double> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (*this)[i].num();
    return v;
  }
  std::vector<double> nullable_nums() const {
    std::vector<double> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (*this)[i].nullable();
    return v;
  }

 private:
  const Json* j_;
  std::string path_;
};

/// Re-raises a validation error from a module validator under `path`. The
/// validator's own paths may start with `root`, which `path` replaces.
[[noreturn]] void rethrow_at(const ValidationError& e, const std::string& path, std::string_view root = {}) {
  std::string fp = e.field_path();
  std::string msg = e.what();
  if (!fp.empty() && msg.starts_with(fp + ": ")) msg = msg.substr(fp.size() + 2);
  if (!root.empty() && (fp == root || fp.starts_with(std::string(root) + ".") || fp.starts_with(std::string(root) + "[")))
    fp = fp.substr(root.size());
  else if (!fp.empty() && fp.front() != '[')
    fp = "." + fp;
  std::string full = path + fp;
  if (!full.empty() && full.front() == '.') full.erase(0, 1);
  throw ValidationError(msg, full.empty() ? "(document)" : full);
}

Json vec(Vec2 v) { return Json::array({v.x, v.y}); }

Json nums(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

template <std::size_t N>
Json nums(const std::array<double, N>& v) {
  return nums(std::vector<double>(v.begin(), v.end()));
}

template <std::size_t N>
Json bools(const std::array<bool, N>& v) {
  Json a = Json::array();
  for (bool b : v) a.push_back(b);
  return a;
}

template <std::size_t N>
std::array<double, N> num_array(const In& in) {
  in.size(N);
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = in[i].num();
  return out;
}

template <std::size_t N>
std::array<bool, N> bool_array(const In& in) {
  in.size(N);
  std::array<bool, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = in[i].boolean();
  return out;
}

Json segment(const Segment& s) { return Json{{"a", vec(s.a)}, {"b", vec(s.b)}}; }
Segment segment_from(const In& in) { return {in.at("a").vec(), in.at("b").vec()}; }

finger::Phalanx phalanx_from(const In& in) {
  const std::string s = in.str();
  for (auto p : finger::kPhalanges)
    if (s == finger::phalanx_name(p)) return p;
  in.fail("unknown phalanx '" + s + "'");
}

Json pivot_ref(const mech::PivotRef& r) { return Json{{"link", r.link}, {"pivot", r.pivot}}; }
mech::PivotRef pivot_ref_from(const In& in) { return {in.at("link").str(), in.at("pivot").str()}; }

Json pose(const Pose2& p) { return Json{{"position", vec(p.position)}, {"angle_deg", rad2deg(p.angle)}}; }
Pose2 pose_from(const In& in) { return {in.at("position").vec(), deg2rad(in.at("angle_deg").num())}; }

Json bounds(const std::vector<design::Bounds>& b) {
  Json a = Json::array();
  for (const auto& x : b) a.push_back(Json::array({x.lo, x.hi}));
  return a;
}

std::vector<design::Bounds> bounds_from(const In& in) {
  std::vector<design::Bounds> b(in.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Vec2 v = in[i].vec();
    b[i] = {v.x, v.y};
  }
  return b;
}

Json optional_nums(const std::optional<std::vector<double>>& v) { return v ? nums(*v) : Json(nullptr); }

optics::Terminal terminal_from(const In& in) {
  const std::string s = in.str();
  for (auto t : {optics::Terminal::pad, optics::Terminal::occluded, optics::Terminal::escaped})
    if (s == optics::terminal_name(t)) return t;
  in.fail("unknown terminal '" + s + "'");
}

int pad_index(const In& in) { return static_cast<int>(in.integer(-1, 2)); }

// --- serializer ---------------------------------------------------------------

bool scalar(const Json& j) { return !j.is_array() && !j.is_object(); }

void put_string(std::string& out, const std::string& s) { out += Json(s).dump(); }

void put(std::string& out, const Json& j, int depth) {
  const auto indent = [&](int d) { out.append(static_cast<std::size_t>(2 * d), ' '); };
  switch (j.type()) {
    case Json::value_t::null: out += "null"; break;
    case Json::value_t::boolean: out += j.get<bool>() ? "true" : "false"; break;
    case Json::value_t::number_integer: out += std::to_string(j.get<std::int64_t>()); break;
    case Json::value_t::number_unsigned: out += std::to_string(j.get<std::uint64_t>()); break;
    case Json::value_t::number_float: out += format_number(j.get<double>()); break;
    case Json::value_t::string: put_string(out, j.get<std::string>()); break;
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      if (std::all_of(j.begin(), j.end(), scalar)) {
        out += '[';
        bool first = true;
        for (const auto& e : j) {
          if (!first) out += ", ";
          first = false;
          put(out, e, depth + 1);
        }
        out += ']';
        break;
      }
      out += "[\n";
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += ",\n";
        first = false;
        indent(depth + 1);
        put(out, e, depth + 1);
      }
      out += '\n';
      indent(depth);
      out += ']';
      break;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        indent(depth + 1);
        put_string(out, k);
        out += ": ";
        put(out, v, depth + 1);
      }
      out += '\n';
      indent(depth);
      out += '}';
      break;
    }
    default: out += "null"; break;
  }
}

}  // namespace

std::string format_number(double v) {
  if (!std::isfinite(v)) return "null";
  if (v == 0.0) return "0";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, kSignificantDigits);
  return std::string(buf, r.ptr);
}

std::string dump(const Json& doc) {
  std::string out;
  put(out, doc, 0);
  out += '\n';
  return out;
}

Json parse(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what(), "(document)");
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path.string() + "'", "(file)");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write '" + path.string() + "'", "(file)");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw ValidationError("write failed for '" + path.string() + "'", "(file)");
}

Json header(std::string_view kind) { return Json{{"format", kFormatVersion}, {"kind", std::string(kind)}}; }

void check_header(const Json& doc, std::string_view kind) {
  const In in(doc, "");
  const In f = in.at("format");
  if (!f.json().is_number_integer()) f.fail("expected integer");
  const auto v = f.json().get<std::int64_t>();
  if (v != kFormatVersion)
    throw VersionError("unsupported format version " + std::to_string(v) + " (this build reads " +
                           std::to_string(kFormatVersion) + ")",
                       "format");
  const std::string k = in.at("kind").str();
  if (k != kind) in.at("kind").fail("expected kind '" + std::string(kind) + "', got '" + k + "'");
}

// --- mechanism ------------------------------------------------------------------

Json to_json(const mech::MechanismGraph& m) {
  Json links = Json::array();
  for (const auto& l : m.links()) {
    Json pivots = Json::array();
    for (const auto& p : l.pivots) pivots.push_back(Json{{"name", p.name}, {"local", vec(p.local)}});
    links.push_back(Json{{"id", l.id}, {"ground", l.is_ground}, {"reference", pose(l.reference)}, {"pivots", pivots}});
  }
  Json joints = Json::array();
  for (const auto& j : m.joints()) joints.push_back(Json{{"id", j.id}, {"a", pivot_ref(j.a)}, {"b", pivot_ref(j.b)}});
  Json drivers = Json::array();
  for (const auto& d : m.drivers()) drivers.push_back(Json{{"name", d.name}, {"joint", d.joint}});
  Json flags = Json::array();
  for (const auto& f : m.branch_flags()) {
    Json pts = Json::array();
    for (const auto& p : f.points) pts.push_back(pivot_ref(p));
    flags.push_back(Json{{"points", pts}, {"sign", f.sign}});
  }
  Json monitored = Json::array();
  for (const auto& t : m.monitored())
    monitored.push_back(Json{{"joint", t.joint}, {"far_a", pivot_ref(t.far_a)}, {"far_b", pivot_ref(t.far_b)}});
  return Json{{"links", links}, {"joints", joints}, {"drivers", drivers}, {"branch_flags", flags}, {"monitored", monitored}};
}

mech::MechanismGraph mechanism_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  std::vector<mech::LinkBody> links;
  const In ls = in.at("links");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const In l = ls[i];
    mech::LinkBody b;
    b.id = l.at("id").str();
    b.is_ground = l.at("ground").boolean();
    b.reference = pose_from(l.at("reference"));
    const In ps = l.at("pivots");
    for (std::size_t k = 0; k < ps.size(); ++k) b.pivots.push_back({ps[k].at("name").str(), ps[k].at("local").vec()});
    links.push_back(std::move(b));
  }
  std::vector<mech::RevoluteJoint> joints;
  const In js = in.at("joints");
  for (std::size_t i = 0; i < js.size(); ++i)
    joints.push_back({js[i].at("id").str(), pivot_ref_from(js[i].at("a")), pivot_ref_from(js[i].at("b"))});
  std::vector<mech::Driver> drivers;
  const In ds = in.at("drivers");
  for (std::size_t i = 0; i < ds.size(); ++i) drivers.push_back({ds[i].at("name").str(), ds[i].at("joint").str()});
  std::vector<mech::BranchFlag> flags;
  if (auto fs = in.maybe("branch_flags")) {
    for (std::size_t i = 0; i < fs->size(); ++i) {
      const In f = (*fs)[i];
      const In pts = f.at("points");
      pts.size(3);
      mech::BranchFlag b;
      for (std::size_t k = 0; k < 3; ++k) b.points[k] = pivot_ref_from(pts[k]);
      b.sign = static_cast<int>(f.at("sign").integer());
      flags.push_back(b);
    }
  }
  std::vector<mech::TransmissionPair> monitored;
  if (auto ms = in.maybe("monitored")) {
    for (std::size_t i = 0; i < ms->size(); ++i) {
      const In t = (*ms)[i];
      monitored.push_back({t.at("joint").str(), pivot_ref_from(t.at("far_a")), pivot_ref_from(t.at("far_b"))});
    }
  }
  try {
    return mech::MechanismGraph(std::move(links), std::move(joints), std::move(drivers), std::move(flags),
                                std::move(monitored));
  } catch (const ValidationError& e) {
    rethrow_at(e, path);
  }
}

// --- finger -------------------------------------------------------------------

Json to_json(const finger::FingerParams& p) {
  Json labels = Json::object();
  for (const auto& [k, v] : p.labels) labels[k] = pivot_ref(v);
  return Json{{"proximal_length", p.proximal_length},
              {"intermediate_length", p.intermediate_length},
              {"distal_length", p.distal_length},
              {"pad_width", p.pad_width},
              {"shell_depth", p.shell_depth},
              {"spring", Json{{"stiffness", p.spring.stiffness}, {"rest_deg", p.spring.rest_deg}}},
              {"stroke_min_deg", p.stroke_min_deg},
              {"stroke_max_deg", p.stroke_max_deg},
              {"pip_max_deg", p.pip_max_deg},
              {"dip_max_deg", p.dip_max_deg},
              {"actuator_joint", p.actuator_joint},
              {"pip_joint", p.pip_joint},
              {"dip_joint", p.dip_joint},
              {"proximal_link", p.proximal_link},
              {"intermediate_link", p.intermediate_link},
              {"distal_link", p.distal_link},
              {"labels", labels},
              {"mechanism", to_json(p.mechanism)}};
}

finger::FingerParams finger_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  finger::FingerParams p;
  p.proximal_length = in.at("proximal_length").num();
  p.intermediate_length = in.at("intermediate_length").num();
  p.distal_length = in.at("distal_length").num();
  p.pad_width = in.at("pad_width").num();
  p.shell_depth = in.at("shell_depth").num();
  const In spring = in.at("spring");
  p.spring.stiffness = spring.at("stiffness").num();
  p.spring.rest_deg = spring.at("rest_deg").num();
  p.stroke_min_deg = in.at("stroke_min_deg").num();
  p.stroke_max_deg = in.at("stroke_max_deg").num();
  p.pip_max_deg = in.at("pip_max_deg").num();
  p.dip_max_deg = in.at("dip_max_deg").num();
  p.actuator_joint = in.at("actuator_joint").str();
  p.pip_joint = in.at("pip_joint").str();
  p.dip_joint = in.at("dip_joint").str();
  p.proximal_link = in.at("proximal_link").str();
  p.intermediate_link = in.at("intermediate_link").str();
  p.distal_link = in.at("distal_link").str();
  const In labels = in.at("labels");
  labels.require_object();
  for (const auto& [k, v] : labels.json().items()) p.labels[k] = pivot_ref_from(In(v, child(labels.path(), k)));
  p.mechanism = mechanism_from_json(in.at("mechanism").json(), child(path, "mechanism"));
  try {
    finger::validate(p);
  } catch (const ValidationError& e) {
    rethrow_at(e, path, "finger");
  }
  return p;
}

Json to_json(const finger::FingerConfig& c) {
  return Json{{"actuator_deg", c.actuator_deg}, {"pip_deg", c.pip_deg}, {"dip_deg", c.dip_deg}};
}

finger::FingerConfig config_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  return {in.at("actuator_deg").num(), in.at("pip_deg").num(), in.at("dip_deg").num()};
}

Json to_json(const finger::FingerParams& params, const finger::FingerSolution& s) {
  const auto& links = params.mechanism.links();
  Json poses = Json::array();
  for (std::size_t i = 0; i < links.size() && i < s.state.poses.size(); ++i) {
    Json p = pose(s.state.poses[i]);
    poses.push_back(Json{{"id", links[i].id}, {"position", p["position"]}, {"angle_deg", p["angle_deg"]}});
  }
  const auto fk = finger::forward_kinematics(params, s.config);
  Json pads = Json::array();
  for (auto ph : finger::kPhalanges) {
    Json seg = segment(fk.pads[static_cast<std::size_t>(ph)]);
    pads.push_back(Json{{"phalanx", finger::phalanx_name(ph)}, {"a", seg["a"]}, {"b", seg["b"]}});
  }
  return Json{{"config", to_json(s.config)}, {"residual", s.state.residual}, {"links", poses}, {"pads", pads}};
}

finger::FingerSolution solution_from_json(const Json& j, const finger::FingerParams& params, const std::string& path) {
  const In in(j, path);
  finger::FingerSolution s;
  s.config = config_from_json(in.at("config").json(), child(path, "config"));
  s.state.residual = in.at("residual").num();
  const In ls = in.at("links");
  const auto& links = params.mechanism.links();
  ls.size(links.size());
  s.state.poses.resize(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    const In l = ls[i];
    if (l.at("id").str() != links[i].id) l.at("id").fail("expected link '" + links[i].id + "'");
    s.state.poses[i] = pose_from(l);
  }
  return s;
}

// --- scene ----------------------------------------------------------------------

Json to_json(const optics::SceneTemplate& t) {
  Json mirrors = Json::array();
  for (const auto& m : t.mirrors) {
    Json seg = segment(m.local);
    mirrors.push_back(Json{{"phalanx", finger::phalanx_name(m.phalanx)}, {"a", seg["a"]}, {"b", seg["b"]}});
  }
  Json occluders = Json::array();
  for (const auto& o : t.occluders) {
    Json seg = segment(o.local);
    occluders.push_back(Json{{"phalanx", finger::phalanx_name(o.phalanx)}, {"a", seg["a"]}, {"b", seg["b"]}});
  }
  return Json{{"camera_position", vec(t.camera_position)},
              {"camera_tilt_deg", t.camera_tilt_deg},
              {"fov_deg", t.fov_deg},
              {"pixels", t.pixels},
              {"max_bounces", t.max_bounces},
              {"shell_occluders", t.shell_occluders},
              {"mirrors", mirrors},
              {"occluders", occluders}};
}

optics::SceneTemplate scene_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  optics::SceneTemplate t;
  t.camera_position = in.at("camera_position").vec();
  t.camera_tilt_deg = in.at("camera_tilt_deg").num();
  t.fov_deg = in.at("fov_deg").num();
  t.pixels = static_cast<int>(in.at("pixels").integer());
  t.max_bounces = static_cast<int>(in.at("max_bounces").integer());
  t.shell_occluders = in.at("shell_occluders").boolean();
  const In ms = in.at("mirrors");
  for (std::size_t i = 0; i < ms.size(); ++i)
    t.mirrors.push_back({phalanx_from(ms[i].at("phalanx")), segment_from(ms[i])});
  const In os = in.at("occluders");
  for (std::size_t i = 0; i < os.size(); ++i)
    t.occluders.push_back({phalanx_from(os[i].at("phalanx")), segment_from(os[i])});
  try {
    optics::validate(t);
  } catch (const ValidationError& e) {
    rethrow_at(e, path, "camera");
  }
  return t;
}

// --- perception ---------------------------------------------------------------

Json to_json(const perception::RenderOptions& o) {
  return Json{{"width", o.width},           {"height", o.height},         {"base", o.base},
              {"reflectance", o.reflectance}, {"border_mm", o.border_mm}, {"scene", to_json(o.scene)}};
}

perception::RenderOptions render_options_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  perception::RenderOptions o;
  o.width = static_cast<int>(in.at("width").integer(1));
  o.height = static_cast<int>(in.at("height").integer(1));
  o.base = in.at("base").num();
  o.reflectance = in.at("reflectance").num();
  o.border_mm = in.at("border_mm").num();
  o.scene = scene_from_json(in.at("scene").json(), child(path, "scene"));
  if (o.base < 0 || o.base > 255) in.at("base").fail("must lie in [0, 255]");
  if (!(o.reflectance > 0 && o.reflectance <= 1)) in.at("reflectance").fail("must lie in (0, 1]");
  if (o.border_mm < 0) in.at("border_mm").fail("must be non-negative");
  return o;
}

Json to_json(const perception::PipelineOptions& o) {
  return Json{{"threshold", o.threshold},         {"min_area", o.min_area},
              {"epsilon", o.epsilon},             {"contact_delta", o.contact_delta},
              {"contact_fraction", o.contact_fraction}};
}

perception::PipelineOptions pipeline_options_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  perception::PipelineOptions o;
  o.threshold = static_cast<int>(in.at("threshold").integer(0, 255));
  o.min_area = in.at("min_area").count();
  o.epsilon = in.at("epsilon").num();
  o.contact_delta = static_cast<int>(in.at("contact_delta").integer(0, 255));
  o.contact_fraction = in.at("contact_fraction").num();
  return o;
}

Json to_json(const perception::CalibrationTable& t) {
  Json samples = Json::array();
  for (const auto& s : t.samples)
    samples.push_back(Json{{"pip_deg", s.pip_deg},
                           {"dip_deg", s.dip_deg},
                           {"valid", s.valid},
                           {"vertices", nums(s.vertices)},
                           {"failure", s.failure}});
  return Json{{"grid_step_deg", t.grid_step_deg},
              {"pip_axis", nums(t.pip_axis)},
              {"dip_axis", nums(t.dip_axis)},
              {"render", to_json(t.render)},
              {"pipeline", to_json(t.pipeline)},
              {"samples", samples}};
}

perception::CalibrationTable table_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  perception::CalibrationTable t;
  t.grid_step_deg = in.at("grid_step_deg").num();
  t.pip_axis = in.at("pip_axis").nums();
  t.dip_axis = in.at("dip_axis").nums();
  t.render = render_options_from_json(in.at("render").json(), child(path, "render"));
  t.pipeline = pipeline_options_from_json(in.at("pipeline").json(), child(path, "pipeline"));
  const In ss = in.at("samples");
  t.samples.resize(ss.size());
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    const In s = ss[i];
    auto& o = t.samples[i];
    o.pip_deg = s.at("pip_deg").num();
    o.dip_deg = s.at("dip_deg").num();
    o.valid = s.at("valid").boolean();
    o.vertices = s.at("vertices").nullable_nums();
    o.failure = s.at("failure").str();
  }
  try {
    perception::validate(t);
  } catch (const ValidationError& e) {
    rethrow_at(e, path);
  }
  return t;
}

Json to_json(const perception::JointEstimate& e) {
  return Json{{"pip_deg", e.pip_deg}, {"dip_deg", e.dip_deg}, {"confidence", e.confidence},
              {"distance_px", e.distance}, {"pads", e.pads}, {"nearest", e.nearest}};
}

// --- grasp ----------------------------------------------------------------------

Json to_json(const finger::GraspObject& o) {
  if (o.shape == finger::GraspObject::Shape::circle)
    return Json{{"shape", "circle"}, {"center", vec(o.center)}, {"radius", o.radius}};
  Json v = Json::array();
  for (const auto& p : o.vertices) v.push_back(vec(p));
  return Json{{"shape", "polygon"}, {"vertices", v}};
}

finger::GraspObject object_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  const std::string shape = in.at("shape").str();
  finger::GraspObject o;
  if (shape == "circle") {
    o = finger::GraspObject::circle(in.at("center").vec(), in.at("radius").num());
  } else if (shape == "polygon") {
    const In vs = in.at("vertices");
    std::vector<Vec2> v(vs.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = vs[i].vec();
    o = finger::GraspObject::polygon(std::move(v));
  } else {
    in.at("shape").fail("expected 'circle' or 'polygon'");
  }
  try {
    finger::validate(o);
  } catch (const ValidationError& e) {
    rethrow_at(e, path, "object");
  }
  return o;
}

Json to_json(const finger::GraspOptions& o) {
  return Json{{"torque_limit", o.torque_limit}, {"step_deg", o.step_deg}};
}

finger::GraspOptions grasp_options_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  finger::GraspOptions o;
  if (auto v = in.maybe("torque_limit")) o.torque_limit = v->num();
  if (auto v = in.maybe("step_deg")) o.step_deg = v->num();
  if (!(o.torque_limit > 0)) in.at("torque_limit").fail("must be positive");
  if (!(o.step_deg > 0)) in.at("step_deg").fail("must be positive");
  return o;
}

Json to_json(const finger::GraspTrace& t) {
  Json steps = Json::array();
  for (const auto& s : t.steps)
    steps.push_back(Json{{"actuator_deg", s.actuator_deg},
                         {"pip_deg", s.pip_deg},
                         {"dip_deg", s.dip_deg},
                         {"contact", bools(s.contact)},
                         {"torque", s.torque},
                         {"min_clearance", s.min_clearance}});
  Json events = Json::array();
  for (const auto& e : t.events)
    events.push_back(Json{{"step", e.step}, {"phalanx", finger::phalanx_name(e.phalanx)}, {"actuator_deg", e.actuator_deg}});
  return Json{{"termination", finger::termination_name(t.termination)},
              {"unreachable", t.unreachable},
              {"torque", t.torque},
              {"contacts", bools(t.contacts)},
              {"final_config", to_json(t.final_config)},
              {"events", events},
              {"steps", steps}};
}

finger::GraspTrace trace_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  finger::GraspTrace t;
  const In term = in.at("termination");
  const std::string name = term.str();
  bool known = false;
  for (auto g : {finger::GraspTermination::all_contacts, finger::GraspTermination::torque_limit,
                 finger::GraspTermination::joint_limit, finger::GraspTermination::stroke_end})
    if (name == finger::termination_name(g)) {
      t.termination = g;
      known = true;
    }
  if (!known) term.fail("unknown termination '" + name + "'");
  t.unreachable = in.at("unreachable").boolean();
  t.torque = in.at("torque").num();
  t.contacts = bool_array<3>(in.at("contacts"));
  t.final_config = config_from_json(in.at("final_config").json(), child(path, "final_config"));
  const In es = in.at("events");
  for (std::size_t i = 0; i < es.size(); ++i)
    t.events.push_back({es[i].at("step").count(), phalanx_from(es[i].at("phalanx")), es[i].at("actuator_deg").num()});
  const In ss = in.at("steps");
  for (std::size_t i = 0; i < ss.size(); ++i) {
    const In s = ss[i];
    finger::GraspStep g;
    g.actuator_deg = s.at("actuator_deg").num();
    g.pip_deg = s.at("pip_deg").num();
    g.dip_deg = s.at("dip_deg").num();
    g.contact = bool_array<3>(s.at("contact"));
    g.torque = s.at("torque").num();
    g.min_clearance = s.at("min_clearance").num();
    t.steps.push_back(g);
  }
  return t;
}

// --- rays, visibility, coverage ---------------------------------------------------

Json to_json(const optics::RayPath& r) {
  Json v = Json::array();
  for (const auto& p : r.vertices) v.push_back(vec(p));
  Json m = Json::array();
  for (int k : r.mirrors) m.push_back(k);
  return Json{{"terminal", optics::terminal_name(r.terminal)}, {"pad", r.pad}, {"t", r.t},
              {"bounces", r.bounces}, {"mirrors", m}, {"vertices", v}};
}

optics::RayPath ray_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  optics::RayPath r;
  r.terminal = terminal_from(in.at("terminal"));
  r.pad = pad_index(in.at("pad"));
  r.t = in.at("t").num();
  r.bounces = static_cast<int>(in.at("bounces").integer(0));
  const In ms = in.at("mirrors");
  for (std::size_t i = 0; i < ms.size(); ++i) r.mirrors.push_back(static_cast<int>(ms[i].integer(0)));
  const In vs = in.at("vertices");
  for (std::size_t i = 0; i < vs.size(); ++i) r.vertices.push_back(vs[i].vec());
  return r;
}

Json to_json(const std::vector<optics::RayPath>& rays) {
  Json a = Json::array();
  for (const auto& r : rays) a.push_back(to_json(r));
  return Json{{"rays", a}};
}

std::vector<optics::RayPath> rays_from_json(const Json& j, const std::string& path) {
  const In rs = In(j, path).at("rays");
  std::vector<optics::RayPath> out;
  for (std::size_t i = 0; i < rs.size(); ++i) out.push_back(ray_from_json(rs[i].json(), rs[i].path()));
  return out;
}

Json to_json(const optics::VisibilityReport& r, bool include_pixels) {
  Json intervals = Json::array();
  for (const auto& pad : r.intervals) {
    Json a = Json::array();
    for (const auto& iv : pad) a.push_back(Json::array({iv.lo, iv.hi}));
    intervals.push_back(a);
  }
  Json doc{{"fraction", nums(r.fraction)}, {"min_fraction", r.min_fraction()}, {"intervals", intervals}};
  if (include_pixels) {
    Json px = Json::array();
    for (const auto& p : r.pixels)
      px.push_back(Json{{"terminal", optics::terminal_name(p.terminal)}, {"pad", p.pad}, {"t", p.t},
                        {"bounces", p.bounces}, {"mirror_key", p.mirror_key}, {"path_length", p.path_length}});
    doc["pixels"] = px;
  }
  return doc;
}

optics::VisibilityReport visibility_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  optics::VisibilityReport r;
  r.fraction = num_array<3>(in.at("fraction"));
  const In iv = in.at("intervals");
  iv.size(3);
  for (std::size_t k = 0; k < 3; ++k) {
    const In pad = iv[k];
    for (std::size_t i = 0; i < pad.size(); ++i) {
      const Vec2 v = pad[i].vec();
      r.intervals[k].push_back({v.x, v.y});
    }
  }
  if (auto px = in.maybe("pixels")) {
    for (std::size_t i = 0; i < px->size(); ++i) {
      const In p = (*px)[i];
      optics::PixelTerminal t;
      t.terminal = terminal_from(p.at("terminal"));
      t.pad = pad_index(p.at("pad"));
      t.t = p.at("t").num();
      t.bounces = static_cast<int>(p.at("bounces").integer(0));
      t.mirror_key = p.at("mirror_key").u64();
      t.path_length = p.at("path_length").num();
      r.pixels.push_back(t);
    }
  }
  return r;
}

Json to_json(const optics::CoverageSummary& s) {
  Json entries = Json::array();
  for (const auto& e : s.entries)
    entries.push_back(Json{{"pip_deg", e.pip_deg}, {"dip_deg", e.dip_deg}, {"feasible", e.feasible},
                           {"fraction", nums(e.fraction)}});
  return Json{{"maximin", s.maximin()}, {"feasible", s.feasible}, {"min", nums(s.min)},
              {"mean", nums(s.mean)}, {"entries", entries}};
}

optics::CoverageSummary coverage_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  optics::CoverageSummary s;
  s.feasible = in.at("feasible").count();
  s.min = num_array<3>(in.at("min"));
  s.mean = num_array<3>(in.at("mean"));
  const In es = in.at("entries");
  for (std::size_t i = 0; i < es.size(); ++i) {
    const In e = es[i];
    s.entries.push_back({e.at("pip_deg").num(), e.at("dip_deg").num(), e.at("feasible").boolean(),
                         num_array<3>(e.at("fraction"))});
  }
  return s;
}

// --- design -----------------------------------------------------------------------

Json to_json(const design::DesignResult& r) {
  Json names = Json::array();
  for (const auto& n : r.names) names.push_back(n);
  Json audit = Json::array();
  for (const auto& c : r.audit) audit.push_back(Json{{"name", c.name}, {"value", c.value}, {"margin", c.margin}});
  return Json{{"names", names},
              {"parameters", nums(r.parameters)},
              {"objective", r.objective},
              {"feasible", r.feasible},
              {"exhausted", r.exhausted},
              {"cancelled", r.cancelled},
              {"evaluations", r.evaluations},
              {"global_best_score", r.global_best_score},
              {"refined_score", r.refined_score},
              {"audit", audit}};
}

design::DesignResult design_result_from_json(const Json& j, const std::string& path) {
  const In in(j, path);
  design::DesignResult r;
  const In ns = in.at("names");
  for (std::size_t i = 0; i < ns.size(); ++i) r.names.push_back(ns[i].str());
  r.parameters = in.at("parameters").nums();
  if (r.parameters.size() != r.names.size()) in.at("parameters").fail("must match names in length");
  r.objective = in.at("objective").nullable();
  r.feasible = in.at("feasible").boolean();
  r.exhausted = in.at("exhausted").boolean();
  r.cancelled = in.at("cancelled").boolean();
  r.evaluations = in.at("evaluations").count();
  r.global_best_score = in.at("global_best_score").nullable();
  r.refined_score = in.at("refined_score").nullable();
  const In as = in.at("audit");
  for (std::size_t i = 0; i < as.size(); ++i)
    r.audit.push_back({as[i].at("name").str(), as[i].at("value").nullable(), as[i].at("margin").nullable()});
  return r;
}

Json to_json(const design::LinkageDesignSpace& s) {
  return Json{{"bounds", bounds(s.bounds)},
              {"start", optional_nums(s.start)},
              {"dof_target", s.dof_target},
              {"rom_target_deg", s.rom_target_deg},
              {"transmission_min_deg", s.transmission_min_deg},
              {"transmission_max_deg", s.transmission_max_deg},
              {"search_step_deg", s.search_step_deg},
              {"search_row_deg", s.search_row_deg},
              {"verify_step_deg", s.verify_step_deg}};
}

design::LinkageDesignSpace linkage_space_from_json(const Json& j, const finger::FingerParams& base,
                                                   const std::string& path) {
  const In in(j, path);
  design::LinkageDesignSpace s;
  s.base = base;
  s.bounds = bounds_from(in.at("bounds"));
  if (auto v = in.maybe("start")) s.start = v->nums();
  s.dof_target = static_cast<int>(in.at("dof_target").integer());
  s.rom_target_deg = in.at("rom_target_deg").num();
  s.transmission_min_deg = in.at("transmission_min_deg").num();
  s.transmission_max_deg = in.at("transmission_max_deg").num();
  s.search_step_deg = in.at("search_step_deg").num();
  s.search_row_deg = in.at("search_row_deg").num();
  s.verify_step_deg = in.at("verify_step_deg").num();
  try {
    design::validate(s);
  } catch (const ValidationError& e) {
    rethrow_at(e, path);
  }
  return s;
}

Json to_json(const design::OpticsDesignSpace& s) {
  Json ph = Json::array();
  for (auto p : s.mirror_phalanges) ph.push_back(finger::phalanx_name(p));
  return Json{{"mirror_phalanges", ph},
              {"bounds", bounds(s.bounds)},
              {"start", optional_nums(s.start)},
              {"target", s.target},
              {"grid_step_deg", s.grid_step_deg},
              {"search_pixels", s.search_pixels}};
}

design::OpticsDesignSpace optics_space_from_json(const Json& j, const finger::FingerParams& finger,
                                                 const optics::SceneTemplate& scene, const std::string& path) {
  const In in(j, path);
  design::OpticsDesignSpace s;
  s.finger = finger;
  s.base = scene;
  const In ph = in.at("mirror_phalanges");
  for (std::size_t i = 0; i < ph.size(); ++i) s.mirror_phalanges.push_back(phalanx_from(ph[i]));
  s.bounds = bounds_from(in.at("bounds"));
  if (auto v = in.maybe("start")) s.start = v->nums();
  s.target = in.at("target").num();
  s.grid_step_deg = in.at("grid_step_deg").num();
  s.search_pixels = static_cast<int>(in.at("search_pixels").integer());
  try {
    design::validate(s);
  } catch (const ValidationError& e) {
    rethrow_at(e, path);
  }
  return s;
}

// --- project ----------------------------------------------------------------------

ProjectFile reference_project() {
  ProjectFile p;
  p.name = "gellink-reference";
  p.finger = finger::default_gellink();
  p.scene = optics::default_scene_template();
  p.linkage_space = design::default_linkage_space();
  p.optics_space = design::default_optics_space(p.finger);
  return p;
}

Json to_json(const ProjectFile& p) {
  Json doc = header("project");
  doc["name"] = p.name;
  doc["finger"] = to_json(p.finger);
  doc["scene"] = to_json(p.scene);
  doc["calibration"] = Json{{"table", p.calibration.table.empty() ? Json(nullptr) : Json(p.calibration.table)},
                            {"grid_step_deg", p.calibration.grid_step_deg}};
  if (p.linkage_space) doc["linkage_space"] = to_json(*p.linkage_space);
  if (p.optics_space) doc["optics_space"] = to_json(*p.optics_space);
  return doc;
}

ProjectFile project_from_json(const Json& j) {
  check_header(j, "project");
  const In in(j, "");
  ProjectFile p;
  p.name = in.at("name").str();
  p.finger = finger_from_json(in.at("finger").json(), "finger");
  p.scene = scene_from_json(in.at("scene").json(), "scene");
  const In cal = in.at("calibration");
  if (auto t = cal.maybe("table")) p.calibration.table = t->str();
  p.calibration.grid_step_deg = cal.at("grid_step_deg").num();
  if (!(p.calibration.grid_step_deg > 0)) cal.at("grid_step_deg").fail("must be positive");
  if (auto s = in.maybe("linkage_space")) p.linkage_space = linkage_space_from_json(s->json(), p.finger, s->path());
  if (auto s = in.maybe("optics_space")) p.optics_space = optics_space_from_json(s->json(), p.finger, p.scene, s->path());
  return p;
}

ProjectFile load_project(const std::filesystem::path& path) {
  ProjectFile p = project_from_json(parse(read_text(path)));
  p.base_dir = path.parent_path();
  if (!p.calibration.table.empty() && !std::filesystem::exists(p.base_dir / p.calibration.table))
    throw ValidationError("referenced file '" + p.calibration.table + "' does not exist", "calibration.table");
  return p;
}

void save_project(const std::filesystem::path& path, const ProjectFile& project) {
  write_text(path, dump(to_json(project)));
}

perception::CalibrationTable project_calibration(const ProjectFile& p) {
  if (!p.calibration.table.empty()) return read_table(read_text(p.base_dir / p.calibration.table));
  perception::RenderOptions render;
  render.scene = p.scene;
  return perception::build_calibration(p.finger, p.calibration.grid_step_deg, render);
}

// --- documents ---------------------------------------------------------------------

std::string write_document(std::string_view kind, Json body) {
  Json doc = header(kind);
  for (auto& [k, v] : body.items()) doc[k] = std::move(v);
  return dump(doc);
}

Json read_document(std::string_view text, std::string_view kind) {
  Json doc = parse(text);
  if (!doc.is_object()) throw ValidationError("expected object", "(document)");
  check_header(doc, kind);
  return doc;
}

std::string write_table(const perception::CalibrationTable& t) { return write_document("calibration_table", to_json(t)); }
perception::CalibrationTable read_table(std::string_view text) {
  return table_from_json(read_document(text, "calibration_table"));
}
std::string write_trace(const finger::GraspTrace& t) { return write_document("grasp_trace", to_json(t)); }
finger::GraspTrace read_trace(std::string_view text) { return trace_from_json(read_document(text, "grasp_trace")); }
std::string write_design_result(const design::DesignResult& r) {
  return write_document("design_result", to_json(r));
}
design::DesignResult read_design_result(std::string_view text) {
  return design_result_from_json(read_document(text, "design_result"));
}
std::string write_mechanism(const mech::MechanismGraph& m) {
  return write_document("mechanism", Json{{"mechanism", to_json(m)}});
}
mech::MechanismGraph read_mechanism(std::string_view text) {
  return mechanism_from_json(In(read_document(text, "mechanism"), "").at("mechanism").json());
}
std::string write_scene(const optics::SceneTemplate& t) { return write_document("scene", Json{{"scene", to_json(t)}}); }
optics::SceneTemplate read_scene(std::string_view text) {
  return scene_from_json(In(read_document(text, "scene"), "").at("scene").json());
}
std::string write_rays(const std::vector<optics::RayPath>& rays) { return write_document("rays", to_json(rays)); }
std::vector<optics::RayPath> read_rays(std::string_view text) { return rays_from_json(read_document(text, "rays")); }

// --- CSV ----------------------------------------------------------------------------

std::vector<SweepRow> actuator_sweep(const finger::FingerParams& params, double step_deg) {
  if (!(step_deg > 0)) throw ValidationError("must be positive", "step_deg");
  const double lo = params.stroke_min_deg, hi = params.stroke_max_deg;
  const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step_deg - 1e-9));
  std::vector<SweepRow> rows;
  std::optional<mech::MechanismState> warm;
  for (std::size_t i = 0; i <= n; ++i) {
    SweepRow r;
    r.actuator_deg = i == n ? hi : lo + static_cast<double>(i) * step_deg;
    try {
      const auto s = finger::free_motion_solution(params, r.actuator_deg, warm ? &*warm : nullptr);
      r.feasible = true;
      r.pip_deg = s.config.pip_deg;
      r.dip_deg = s.config.dip_deg;
      r.transmission_deg = mech::transmission_angles(params.mechanism, s.state, params.mechanism.monitored());
      warm = s.state;
    } catch (const Error&) {
      r.transmission_deg.assign(params.mechanism.monitored().size(), kNaN);
      warm.reset();
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string csv_number(double v) {
  const std::string s = format_number(v);
  return s == "null" ? "" : s;
}

}  // namespace

std::string sweep_csv(const finger::FingerParams& params, const std::vector<SweepRow>& rows) {
  std::string out = "actuator_deg,feasible,pip_deg,dip_deg";
  for (const auto& m : params.mechanism.monitored()) out += ",mu_" + m.joint + "_deg";
  out += '\n';
  for (const auto& r : rows) {
    out += csv_number(r.actuator_deg) + "," + (r.feasible ? "1" : "0") + "," +
           (r.feasible ? csv_number(r.pip_deg) : "") + "," + (r.feasible ? csv_number(r.dip_deg) : "");
    for (double t : r.transmission_deg) out += "," + csv_number(t);
    out += '\n';
  }
  return out;
}

std::string grasp_csv(const finger::GraspTrace& t) {
  std::string out =
      "step,actuator_deg,pip_deg,dip_deg,contact_proximal,contact_intermediate,contact_distal,torque_nmm,"
      "min_clearance_mm\n";
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    out += std::to_string(i) + "," + csv_number(s.actuator_deg) + "," + csv_number(s.pip_deg) + "," +
           csv_number(s.dip_deg);
    for (bool c : s.contact) out += c ? ",1" : ",0";
    out += "," + csv_number(s.torque) + "," + csv_number(s.min_clearance) + "\n";
  }
  return out;
}

// --- PGM ----------------------------------------------------------------------------

std::string write_pgm(const perception::RasterImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.data.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height))
    throw ValidationError("image size does not match its data", "image");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  return out;
}

perception::RasterImage read_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  const auto fail = [](const std::string& field, const std::string& what) -> perception::RasterImage {
    throw ValidationError(what, "pgm." + field);
  };
  if (bytes.substr(0, 2) != "P5") return fail("magic", "expected P5 binary graymap");
  pos = 2;
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  const auto next_int = [&](const char* field) -> long {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    long v = 0;
    const auto r = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (r.ec != std::errc{} || r.ptr == bytes.data() + pos) throw ValidationError("expected integer", std::string("pgm.") + field);
    pos = static_cast<std::size_t>(r.ptr - bytes.data());
    return v;
  };
  if (pos < bytes.size() && !is_space(bytes[pos]) && bytes[pos] != '#') return fail("magic", "expected P5 binary graymap");
  const long w = next_int("width");
  const long h = next_int("height");
  const long maxval = next_int("maxval");
  if (w <= 0 || w > 1 << 16) return fail("width", "out of range");
  if (h <= 0 || h > 1 << 16) return fail("height", "out of range");
  if (maxval <= 0 || maxval > 255) return fail("maxval", "only 8-bit images are supported");
  if (pos >= bytes.size() || !is_space(bytes[pos])) return fail("data", "missing separator before pixel data");
  ++pos;
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < n) return fail("data", "truncated pixel data");
  perception::RasterImage img(static_cast<int>(w), static_cast<int>(h));
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), n, img.data.begin());
  return img;
}

// --- SVG ----------------------------------------------------------------------------

namespace {

constexpr const char* kPhalanxColor[3] = {"#2ca02c", "#1f77b4", "#d62728"};  // green, blue, red

std::string fixed(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 3);
  std::string s(buf, r.ptr);
  if (s == "-0.000") s = "0.000";
  return s;
}

struct Canvas {
  double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
  double scale = 4.0, margin = 10.0;
  std::string body;

  void include(Vec2 p) {
    if (!is_finite(p)) return;
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  double X(double x) const { return (x - minx + margin) * scale; }
  double Y(double y) const { return (maxy - y + margin) * scale; }
  double width() const { return (maxx - minx + 2 * margin) * scale; }
  double height() const { return (maxy - miny + 2 * margin) * scale; }

  void line(const Segment& s, const std::string& attrs) {
    body += "  <line " + attrs + " x1=\"" + fixed(X(s.a.x)) + "\" y1=\"" + fixed(Y(s.a.y)) + "\" x2=\"" +
            fixed(X(s.b.x)) + "\" y2=\"" + fixed(Y(s.b.y)) + "\"/>\n";
  }
  void polyline(const std::vector<Vec2>& pts, const std::string& attrs, bool closed = false) {
    body += std::string("  <") + (closed ? "polygon" : "polyline") + " " + attrs + " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) body += ' ';
      body += fixed(X(pts[i].x)) + "," + fixed(Y(pts[i].y));
    }
    body += "\"/>\n";
  }
  void circle(Vec2 c, double r_px, const std::string& attrs) {
    body += "  <circle " + attrs + " cx=\"" + fixed(X(c.x)) + "\" cy=\"" + fixed(Y(c.y)) + "\" r=\"" + fixed(r_px) +
            "\"/>\n";
  }
  std::string document() const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           fixed(width()) + "\" height=\"" + fixed(height()) + "\" viewBox=\"0 0 " + fixed(width()) + " " +
           fixed(height()) + "\">\n  <rect class=\"background\" x=\"0\" y=\"0\" width=\"" + fixed(width()) +
           "\" height=\"" + fixed(height()) + "\" fill=\"#ffffff\"/>\n" + body + "</svg>\n";
  }
};

int phalanx_of_link(const finger::FingerParams& p, const std::string& id) {
  if (id == p.proximal_link) return 0;
  if (id == p.intermediate_link) return 1;
  if (id == p.distal_link) return 2;
  return -1;
}

const char* ray_color(optics::Terminal t) {
  switch (t) {
    case optics::Terminal::pad: return "#ff7f0e";
    case optics::Terminal::occluded: return "#7f7f7f";
    case optics::Terminal::escaped: break;
  }
  return "#c7c7c7";
}

}  // namespace

std::string emit_svg(const finger::FingerParams& params, const finger::FingerConfig& config,
                     const optics::OpticsScene* scene, const std::vector<optics::RayPath>& rays,
                     const SvgOptions& options) {
  const auto fk = finger::forward_kinematics(params, config);
  const auto shells = finger::shell_segments(params, fk);
  std::optional<mech::MechanismState> state;
  if (options.show_linkage) state = finger::solve_joints(params, config.pip_deg, config.dip_deg).state;

  Canvas c;
  c.scale = options.scale;
  c.margin = options.margin;
  for (const auto& s : fk.pads) {
    c.include(s.a);
    c.include(s.b);
  }
  if (options.show_shells)
    for (const auto& s : shells) {
      c.include(s.a);
      c.include(s.b);
    }
  const auto& mech = params.mechanism;
  if (state)
    for (std::size_t i = 0; i < mech.links().size(); ++i)
      for (const auto& pv : mech.links()[i].pivots) c.include(state->poses[i].apply(pv.local));
  if (scene) {
    for (const auto& m : scene->mirrors) {
      c.include(m.segment.a);
      c.include(m.segment.b);
    }
    c.include(scene->camera.position);
  }

  if (options.show_shells)
    for (const auto& s : shells) c.line(s, "class=\"shell\" stroke=\"#bdbdbd\" stroke-width=\"1.000\"");
  if (state) {
    for (std::size_t i = 0; i < mech.links().size(); ++i) {
      const auto& l = mech.links()[i];
      std::vector<Vec2> pts;
      for (const auto& pv : l.pivots) pts.push_back(state->poses[i].apply(pv.local));
      const int ph = phalanx_of_link(params, l.id);
      const std::string color = ph >= 0 ? kPhalanxColor[ph] : "#555555";
      const std::string attrs = "class=\"link\" data-link=\"" + l.id + "\" fill=\"none\" stroke=\"" + color +
                                "\" stroke-width=\"1.500\"";
      c.polyline(pts, attrs, pts.size() >= 3);
    }
    for (const auto& j : mech.joints()) c.circle(state->pivot_world(mech, j.a), 2.0, "class=\"joint\" data-joint=\"" + j.id + "\" fill=\"#000000\"");
  }
  for (auto ph : finger::kPhalanges) {
    const auto k = static_cast<std::size_t>(ph);
    c.line(fk.pads[k], std::string("class=\"pad\" data-phalanx=\"") + finger::phalanx_name(ph) + "\" stroke=\"" +
                           kPhalanxColor[k] + "\" stroke-width=\"4.000\" stroke-linecap=\"round\"");
  }
  if (scene) {
    for (std::size_t i = 0; i < scene->mirrors.size(); ++i)
      c.line(scene->mirrors[i].segment, "class=\"mirror\" data-index=\"" + std::to_string(i) +
                                            "\" stroke=\"#17becf\" stroke-width=\"2.500\"");
    for (const auto& o : scene->occluders) c.line(o, "class=\"occluder\" stroke=\"#8c564b\" stroke-width=\"0.750\"");
    c.circle(scene->camera.position, 3.0, "class=\"camera\" fill=\"#9467bd\"");
  }
  for (std::size_t i = 0; i < rays.size(); ++i)
    c.polyline(rays[i].vertices, "class=\"ray\" data-index=\"" + std::to_string(i) + "\" data-terminal=\"" +
                                     optics::terminal_name(rays[i].terminal) + "\" fill=\"none\" stroke=\"" +
                                     ray_color(rays[i].terminal) + "\" stroke-width=\"0.500\"");
  return c.document();
}

std::string emit_coverage_svg(const optics::CoverageSummary& s) {
  std::set<double> pips, dips;
  for (const auto& e : s.entries) {
    pips.insert(e.pip_deg);
    dips.insert(e.dip_deg);
  }
  const std::vector<double> pv(pips.begin(), pips.end()), dv(dips.begin(), dips.end());
  constexpr double cell = 16.0, left = 60.0, top = 40.0;
  const double w = left + cell * static_cast<double>(pv.size()) + 20.0;
  const double h = top + cell * static_cast<double>(dv.size()) + 40.0;
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    fixed(w) + "\" height=\"" + fixed(h) + "\" viewBox=\"0 0 " + fixed(w) + " " + fixed(h) + "\">\n";
  out += "  <rect class=\"background\" x=\"0\" y=\"0\" width=\"" + fixed(w) + "\" height=\"" + fixed(h) +
         "\" fill=\"#ffffff\"/>\n";
  out += "  <text x=\"" + fixed(left) + "\" y=\"20.000\" font-size=\"12\">worst-pad coverage, maximin " +
         format_number(s.maximin()) + "</text>\n";
  for (const auto& e : s.entries) {
    const auto i = static_cast<double>(std::lower_bound(pv.begin(), pv.end(), e.pip_deg) - pv.begin());
    const auto j = static_cast<double>(std::lower_bound(dv.begin(), dv.end(), e.dip_deg) - dv.begin());
    const double worst = std::min({e.fraction[0], e.fraction[1], e.fraction[2]});
    std::string fill = "#ff00ff";
    if (e.feasible) {
      const int g = static_cast<int>(std::lround(255.0 * std::clamp(worst, 0.0, 1.0)));
      char buf[8];
      std::snprintf(buf, sizeof buf, "#%02x%02x%02x", 255 - g, g, 64);
      fill = buf;
    }
    // DIP grows upwards.
    const double y = top + cell * (static_cast<double>(dv.size()) - 1.0 - j);
    out += "  <rect class=\"cell\" data-pip=\"" + format_number(e.pip_deg) + "\" data-dip=\"" +
           format_number(e.dip_deg) + "\" data-min=\"" + format_number(worst) + "\" x=\"" +
           fixed(left + cell * i) + "\" y=\"" + fixed(y) + "\" width=\"" + fixed(cell) + "\" height=\"" +
           fixed(cell) + "\" fill=\"" + fill + "\"/>\n";
  }
  out += "  <text x=\"" + fixed(left) + "\" y=\"" + fixed(h - 10.0) + "\" font-size=\"12\">PIP (deg)</text>\n";
  out += "  <text x=\"5.000\" y=\"" + fixed(top + 12.0) + "\" font-size=\"12\">DIP (deg)</text>\n";
  out += "</svg>\n";
  return out;
}

}  // namespace linkfold::io
