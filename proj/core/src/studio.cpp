#include "linkfold/studio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "linkfold/design.hpp"
#include "linkfold/error.hpp"
#include "linkfold/finger.hpp"
#include "linkfold/optics.hpp"
#include "linkfold/perception.hpp"

namespace linkfold::studio {

using io::Json;

const char* job_kind_name(JobKind k) {
  switch (k) {
    case JobKind::optimize_linkage: return "optimize-linkage";
    case JobKind::optimize_optics: return "optimize-optics";
    case JobKind::grasp: return "grasp";
    case JobKind::calibrate: return "calibrate";
  }
  return "?";
}

const char* job_state_name(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "?";
}

Json to_json(const JobInfo& j) {
  Json out{{"id", j.id},
           {"kind", job_kind_name(j.kind)},
           {"state", job_state_name(j.state)},
           {"progress", j.progress},
           {"session", j.session},
           {"revision", j.revision},
           {"cancel_requested", j.cancel_requested},
           {"cancelled", j.cancelled},
           {"error", j.error.empty() ? Json(nullptr) : Json(j.error)},
           {"queued_at", j.queued_at},
           {"started_at", j.started_at ? Json(*j.started_at) : Json(nullptr)},
           {"finished_at", j.finished_at ? Json(*j.finished_at) : Json(nullptr)}};
  if (j.result) out["result"] = *j.result;
  if (j.partial) out["partial"] = *j.partial;
  return out;
}

// --- job runner ------------------------------------------------------------------

bool JobContext::report(double progress, const Json* incumbent) {
  std::lock_guard lk(runner_->mu_);
  auto& info = runner_->jobs_.at(id_).info;
  if (std::isfinite(progress)) info.progress = std::max(info.progress, std::clamp(progress, 0.0, 1.0));
  if (incumbent) info.partial = *incumbent;
  runner_->cv_.notify_all();
  return !info.cancel_requested;
}

bool JobContext::cancel_requested() const {
  std::lock_guard lk(runner_->mu_);
  return runner_->jobs_.at(id_).info.cancel_requested;
}

JobRunner::JobRunner(std::size_t concurrency) {
  if (concurrency == 0) throw ValidationError("must be at least 1", "concurrency");
  for (std::size_t i = 0; i < concurrency; ++i) workers_.emplace_back([this] { work(); });
}

JobRunner::~JobRunner() { shutdown(); }

double JobRunner::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
}

std::string JobRunner::submit(JobKind kind, std::string session, std::uint64_t revision, Task task) {
  std::lock_guard lk(mu_);
  if (stopping_) throw Error("job runner is shut down");
  Entry e;
  e.info.id = "j" + std::to_string(next_);
  e.info.sequence = next_++;
  e.info.kind = kind;
  e.info.session = std::move(session);
  e.info.revision = revision;
  e.info.queued_at = now();
  e.task = std::move(task);
  const std::string id = e.info.id;
  jobs_.emplace(id, std::move(e));
  queue_.push_back(id);
  cv_.notify_all();
  return id;
}

std::optional<JobInfo> JobRunner::get(const std::string& id) const {
  std::lock_guard lk(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.info;
}

std::vector<JobInfo> JobRunner::list() const {
  std::lock_guard lk(mu_);
  std::vector<JobInfo> out;
  for (const auto& [id, e] : jobs_) out.push_back(e.info);
  std::sort(out.begin(), out.end(), [](const JobInfo& a, const JobInfo& b) { return a.sequence < b.sequence; });
  return out;
}

bool JobRunner::cancel(const std::string& id) {
  std::lock_guard lk(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return false;
  auto& info = it->second.info;
  if (info.state == JobState::queued) {
    info.state = JobState::failed;
    info.cancelled = true;
    info.cancel_requested = true;
    info.error = "cancelled";
    info.finished_at = now();
    it->second.task = nullptr;
  } else if (info.state == JobState::running) {
    info.cancel_requested = true;
  }
  cv_.notify_all();
  return true;
}

std::optional<JobInfo> JobRunner::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  const auto terminal = [&] {
    auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.info.state == JobState::done || it->second.info.state == JobState::failed;
  };
  cv_.wait_for(lk, timeout, terminal);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.info;
}

void JobRunner::shutdown() {
  {
    std::lock_guard lk(mu_);
    if (stopping_ && workers_.empty()) return;
    stopping_ = true;
  }
  for (const auto& info : list())
    if (info.state == JobState::queued || info.state == JobState::running) cancel(info.id);
  cv_.notify_all();
  for (auto& w : workers_)
    if (w.joinable()) w.join();
  workers_.clear();
}

void JobRunner::work() {
  std::unique_lock lk(mu_);
  for (;;) {
    cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) return;
    const std::string id = queue_.front();
    queue_.pop_front();
    auto& entry = jobs_.at(id);
    if (entry.info.state != JobState::queued) continue;  // cancelled while waiting
    entry.info.state = JobState::running;
    entry.info.started_at = now();
    Task task = std::move(entry.task);
    entry.task = nullptr;
    cv_.notify_all();
    lk.unlock();

    JobContext ctx(this, id);
    std::optional<Json> result;
    std::string error;
    bool cancelled = false;
    try {
      result = task(ctx);
    } catch (const CancelledError&) {
      cancelled = true;
    } catch (const std::exception& e) {
      error = e.what();
      if (error.empty()) error = "worker failed";
    } catch (...) {
      error = "worker failed with a non-standard exception";
    }

    lk.lock();
    auto& info = jobs_.at(id).info;
    if (!cancelled && error.empty() && info.cancel_requested) {
      cancelled = true;
      info.partial = std::move(result);
    }
    if (cancelled) {
      info.state = JobState::failed;
      info.cancelled = true;
      info.error = "cancelled";
    } else if (!error.empty()) {
      info.state = JobState::failed;
      info.error = error;
    } else {
      info.state = JobState::done;
      info.progress = 1.0;
      info.result = std::move(result);
    }
    info.finished_at = now();
    cv_.notify_all();
  }
}

// --- service -----------------------------------------------------------------------

namespace {

struct HttpError {
  int status;
  std::string message;
};

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

double parse_double(const std::string& text, const std::string& field) {
  double v = 0.0;
  const char* b = text.data();
  const char* e = b + text.size();
  while (b < e && *b == ' ') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e || !std::isfinite(v)) throw ValidationError("expected a number", field);
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& field) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) throw ValidationError("expected an integer", field);
  return v;
}

const std::string& query(const Request& r, const std::string& key) {
  auto it = r.query.find(key);
  if (it == r.query.end()) throw ValidationError("missing query parameter", key);
  return it->second;
}

Json body_json(const Request& r) {
  if (r.body.find_first_not_of(" \t\r\n") == std::string::npos) return Json::object();
  Json j = io::parse(r.body);
  if (!j.is_object()) throw ValidationError("expected a JSON object", "(body)");
  return j;
}

Response json_response(int status, const Json& body, std::optional<std::uint64_t> revision) {
  Response out;
  out.status = status;
  out.body = io::dump(body);
  out.revision = revision;
  return out;
}

Json with_revision(const std::string& session, std::uint64_t revision, Json payload) {
  Json out{{"session", session}, {"revision", revision}};
  for (auto& [k, v] : payload.items()) out[k] = std::move(v);
  return out;
}

Json config_json(double pip, double dip) { return Json{{"pip_deg", pip}, {"dip_deg", dip}}; }

/// Optics space matching a scene whose mirror list changed.
design::OpticsDesignSpace optics_space_for(const finger::FingerParams& f, const optics::SceneTemplate& scene) {
  auto s = design::default_optics_space(f);
  s.base = scene;
  s.mirror_phalanges.clear();
  s.bounds.resize(3);
  for (const auto& m : scene.mirrors) {
    s.mirror_phalanges.push_back(m.phalanx);
    const double L = f.length(m.phalanx);
    for (int k = 0; k < 2; ++k) {
      s.bounds.push_back({0.0, L});
      s.bounds.push_back({-f.shell_depth, 0.0});
    }
  }
  auto x = design::optics_parameters(s, scene);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], s.bounds[i].lo, s.bounds[i].hi);
  s.start = x;
  return s;
}

std::size_t budget_of(const Json& body, std::size_t fallback) {
  if (!body.contains("budget")) return fallback;
  const auto& b = body["budget"];
  if (!b.is_number_integer() || b.get<std::int64_t>() < 1 || b.get<std::int64_t>() > 10'000'000)
    throw ValidationError("expected an integer in [1, 10000000]", "budget");
  return static_cast<std::size_t>(b.get<std::int64_t>());
}

std::uint64_t seed_of(const Json& body) {
  if (!body.contains("seed")) return 1;
  const auto& s = body["seed"];
  if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0))
    throw ValidationError("expected a non-negative integer", "seed");
  return s.get<std::uint64_t>();
}

}  // namespace

std::pair<double, double> parse_config(const std::string& text, const std::string& field) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ValidationError("expected 'pip,dip' in degrees", field);
  return {parse_double(text.substr(0, comma), field), parse_double(text.substr(comma + 1), field)};
}

Service::Service(ServiceOptions options) : options_(std::move(options)), runner_(options_.concurrency) {}

Service::~Service() { shutdown(); }

std::string Service::create_session(io::ProjectFile project) {
  auto st = std::make_shared<State>();
  st->project = std::move(project);
  st->revision = 1;
  std::lock_guard lk(mu_);
  const std::string id = "s" + std::to_string(next_session_++);
  sessions_[id] = std::move(st);
  latest_ = id;
  return id;
}

std::shared_ptr<const Service::State> Service::state_of(const std::string& id) const {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError{404, "unknown session '" + id + "'"};
  return it->second;
}

std::pair<std::string, std::shared_ptr<const Service::State>> Service::resolve(const Request& r) const {
  std::string id;
  if (auto it = r.query.find("session"); it != r.query.end()) {
    id = it->second;
  } else {
    std::lock_guard lk(mu_);
    id = latest_;
  }
  if (id.empty()) throw HttpError{404, "no session; POST /sessions first"};
  auto st = state_of(id);
  if (auto it = r.query.find("revision"); it != r.query.end()) {
    if (parse_u64(it->second, "revision") != st->revision)
      throw HttpError{409, "stale revision " + it->second + "; current is " + std::to_string(st->revision)};
  }
  return {id, st};
}

Json Service::snapshot() const {
  Json sessions = Json::array();
  {
    std::lock_guard lk(mu_);
    for (const auto& [id, st] : sessions_)
      sessions.push_back(Json{{"id", id}, {"revision", st->revision}, {"project", io::to_json(st->project)}});
  }
  Json jobs = Json::array();
  for (auto info : runner_.list()) {
    info.result.reset();
    info.partial.reset();
    jobs.push_back(to_json(info));
  }
  Json doc = io::header("studio_snapshot");
  doc["sessions"] = sessions;
  doc["jobs"] = jobs;
  return doc;
}

void Service::shutdown() {
  {
    std::lock_guard lk(mu_);
    if (shut_down_) return;
    shut_down_ = true;
  }
  runner_.shutdown();
  if (options_.snapshot_path) io::write_text(*options_.snapshot_path, io::dump(snapshot()));
}

Response Service::handle(const Request& request) {
  std::optional<std::uint64_t> revision;
  std::string session;
  const auto current_revision = [&]() -> std::optional<std::uint64_t> {
    try {
      const auto parts = split_path(request.path);
      std::string id;
      if (parts.size() >= 2 && parts[0] == "sessions") id = parts[1];
      else if (auto it = request.query.find("session"); it != request.query.end()) id = it->second;
      else {
        std::lock_guard lk(mu_);
        id = latest_;
      }
      if (id.empty()) return std::nullopt;
      return state_of(id)->revision;
    } catch (...) {
      return std::nullopt;
    }
  };
  const auto error = [&](int status, const std::string& message, const std::string& field) {
    const auto rev = current_revision();
    Json e{{"status", status}, {"message", message}};
    if (!field.empty()) e["field"] = field;
    return json_response(status, Json{{"error", e}, {"revision", rev ? Json(*rev) : Json(nullptr)}}, rev);
  };
  try {
    return dispatch(request);
  } catch (const HttpError& e) {
    return error(e.status, e.message, "");
  } catch (const ValidationError& e) {
    return error(400, e.what(), e.field_path());
  } catch (const AssemblyError& e) {
    return error(422, e.what(), "");
  } catch (const DomainError& e) {
    return error(422, e.what(), "");
  } catch (const ConvergenceError& e) {
    return error(422, e.what(), "");
  } catch (const SingularityError& e) {
    return error(422, e.what(), "");
  } catch (const VisibilityError& e) {
    return error(422, e.what(), "");
  } catch (const GeometryError& e) {
    return error(422, e.what(), "");
  } catch (const FeatureError& e) {
    return error(422, e.what(), "");
  } catch (const std::exception& e) {
    return error(500, e.what(), "");
  } catch (...) {
    return error(500, "internal error", "");
  }
}

Response Service::dispatch(const Request& r) {
  const auto p = split_path(r.path);
  const std::string& m = r.method;
  const auto method_not_allowed = [&]() -> Response { throw HttpError{405, m + " not allowed on " + r.path}; };

  if (p.size() == 1 && p[0] == "health") return json_response(200, Json{{"status", "ok"}}, std::nullopt);
  if (p.size() == 1 && p[0] == "sessions") return m == "POST" ? post_session(r) : method_not_allowed();
  if (p.size() == 2 && p[0] == "sessions") return m == "GET" ? get_session(p[1]) : method_not_allowed();
  if (p.size() == 3 && p[0] == "sessions" && p[2] == "scene")
    return m == "PATCH" ? patch_scene(p[1], r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "solve") return m == "GET" ? get_solve(r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "trace") return m == "GET" ? get_trace(r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "coverage") return m == "GET" ? get_coverage(r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "render") return m == "GET" ? get_render(r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "grasp") return m == "POST" ? post_job(JobKind::grasp, r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "calibrate") return m == "POST" ? post_job(JobKind::calibrate, r) : method_not_allowed();
  if (p.size() == 2 && p[0] == "optimize" && p[1] == "linkage")
    return m == "POST" ? post_job(JobKind::optimize_linkage, r) : method_not_allowed();
  if (p.size() == 2 && p[0] == "optimize" && p[1] == "optics")
    return m == "POST" ? post_job(JobKind::optimize_optics, r) : method_not_allowed();
  if (p.size() == 1 && p[0] == "jobs") return m == "GET" ? list_jobs() : method_not_allowed();
  if (p.size() == 2 && p[0] == "jobs") {
    if (m == "GET") return get_job(p[1]);
    if (m == "DELETE") return cancel_job(p[1]);
    return method_not_allowed();
  }
  if (p.size() == 3 && p[0] == "jobs" && p[2] == "cancel") return m == "POST" ? cancel_job(p[1]) : method_not_allowed();
  throw HttpError{404, "no route for " + r.path};
}

Response Service::post_session(const Request& r) {
  io::ProjectFile project;
  const Json body = body_json(r);
  if (body.empty())
    project = options_.default_project ? *options_.default_project : io::reference_project();
  else
    project = io::project_from_json(body.contains("project") ? body["project"] : body);
  const std::string id = create_session(std::move(project));
  return json_response(201, Json{{"session", id}, {"revision", 1}}, 1);
}

Response Service::get_session(const std::string& id) {
  const auto st = state_of(id);
  return json_response(200, with_revision(id, st->revision, Json{{"project", io::to_json(st->project)}}), st->revision);
}

Response Service::patch_scene(const std::string& id, const Request& r) {
  const Json body = body_json(r);
  if (!body.contains("revision")) throw ValidationError("missing field", "revision");
  if (!body["revision"].is_number_unsigned() && !body["revision"].is_number_integer())
    throw ValidationError("expected integer", "revision");
  const auto expected = body["revision"].get<std::uint64_t>();
  if (!body.contains("scene") || !body["scene"].is_object()) throw ValidationError("expected object", "scene");

  static const std::set<std::string> kFields{"camera_position", "camera_tilt_deg", "fov_deg", "pixels",
                                             "max_bounces",     "shell_occluders", "mirrors", "occluders"};
  std::lock_guard lk(mu_);  // single writer per service; readers hold their own snapshots
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError{404, "unknown session '" + id + "'"};
  const auto cur = it->second;
  if (expected != cur->revision)
    throw HttpError{409, "stale revision " + std::to_string(expected) + "; current is " + std::to_string(cur->revision)};
  Json merged = io::to_json(cur->project.scene);
  for (const auto& [k, v] : body["scene"].items()) {
    if (!kFields.contains(k)) throw ValidationError("unknown field", "scene." + k);
    merged[k] = v;
  }
  auto next = std::make_shared<State>(*cur);
  next->project.scene = io::scene_from_json(merged, "scene");
  if (next->project.optics_space) {
    if (next->project.optics_space->mirror_phalanges.size() == next->project.scene.mirrors.size()) {
      next->project.optics_space->base = next->project.scene;
      for (std::size_t i = 0; i < next->project.scene.mirrors.size(); ++i)
        next->project.optics_space->mirror_phalanges[i] = next->project.scene.mirrors[i].phalanx;
    } else {
      next->project.optics_space = optics_space_for(next->project.finger, next->project.scene);
    }
  }
  next->revision = cur->revision + 1;
  it->second = next;
  return json_response(200, with_revision(id, next->revision, Json{{"scene", io::to_json(next->project.scene)}}),
                       next->revision);
}

Response Service::get_solve(const Request& r) {
  const auto [id, st] = resolve(r);
  const auto& f = st->project.finger;
  const double actuator = parse_double(query(r, "actuator"), "actuator");
  finger::FingerSolution sol;
  if (auto it = r.query.find("dip"); it != r.query.end())
    sol = finger::solve_actuated(f, actuator, parse_double(it->second, "dip"));
  else
    sol = finger::free_motion_solution(f, actuator);
  Json payload{{"state", io::to_json(f, sol)}};
  payload["transmission_deg"] = Json::array();
  for (double t : mech::transmission_angles(f.mechanism, sol.state, f.mechanism.monitored()))
    payload["transmission_deg"].push_back(t);
  return json_response(200, with_revision(id, st->revision, std::move(payload)), st->revision);
}

Response Service::get_trace(const Request& r) {
  const auto [id, st] = resolve(r);
  const auto [pip, dip] = parse_config(query(r, "config"));
  std::size_t stride = 1;
  if (auto it = r.query.find("stride"); it != r.query.end()) {
    stride = static_cast<std::size_t>(parse_u64(it->second, "stride"));
    if (stride == 0) throw ValidationError("must be at least 1", "stride");
  }
  const auto scene = optics::build_scene(st->project.finger, st->project.scene, pip, dip);
  std::vector<optics::RayPath> rays;
  for (int px = 0; px < scene.camera.pixels; px += static_cast<int>(stride)) rays.push_back(optics::trace_ray(scene, px));
  Json payload{{"config", config_json(pip, dip)}, {"rays", io::to_json(rays)["rays"]}};
  return json_response(200, with_revision(id, st->revision, std::move(payload)), st->revision);
}

Response Service::get_coverage(const Request& r) {
  const auto [id, st] = resolve(r);
  const auto [pip, dip] = parse_config(query(r, "config"));
  bool pixels = false;
  if (auto it = r.query.find("pixels"); it != r.query.end()) pixels = it->second == "1" || it->second == "true";
  const auto scene = optics::build_scene(st->project.finger, st->project.scene, pip, dip);
  Json payload{{"config", config_json(pip, dip)}, {"visibility", io::to_json(optics::visibility(scene), pixels)}};
  return json_response(200, with_revision(id, st->revision, std::move(payload)), st->revision);
}

Response Service::get_render(const Request& r) {
  const auto [id, st] = resolve(r);
  const auto [pip, dip] = parse_config(query(r, "config"));
  perception::RenderOptions o;
  o.scene = st->project.scene;
  Response out;
  out.content_type = "image/x-portable-graymap";
  out.body = io::write_pgm(perception::synth_render(st->project.finger, pip, dip, {}, o));
  out.revision = st->revision;
  return out;
}

Response Service::post_job(JobKind kind, const Request& r) {
  const auto resolved = resolve(r);
  const std::string& id = resolved.first;
  const std::shared_ptr<const State> st = resolved.second;
  const Json body = body_json(r);
  JobRunner::Task task;
  switch (kind) {
    case JobKind::optimize_linkage: {
      const auto budget = budget_of(body, 1000);
      const auto seed = seed_of(body);
      auto space = st->project.linkage_space.value_or(design::default_linkage_space());
      space.base = st->project.finger;
      design::validate(space);
      task = [space, budget, seed](JobContext& ctx) {
        const auto res = design::optimize_linkage(space, budget, seed, [&](double f, const design::DesignResult& inc) {
          const Json j = io::to_json(inc);
          return ctx.report(f, &j);
        });
        return io::to_json(res);
      };
      break;
    }
    case JobKind::optimize_optics: {
      const auto budget = budget_of(body, 1000);
      const auto seed = seed_of(body);
      auto space = st->project.optics_space.value_or(optics_space_for(st->project.finger, st->project.scene));
      space.finger = st->project.finger;
      design::validate(space);
      task = [space, budget, seed](JobContext& ctx) {
        const auto res = design::optimize_optics(space, budget, seed, [&](double f, const design::DesignResult& inc) {
          const Json j = io::to_json(inc);
          return ctx.report(f, &j);
        });
        return io::to_json(res);
      };
      break;
    }
    case JobKind::grasp: {
      if (!body.contains("object")) throw ValidationError("missing field", "object");
      const auto object = io::object_from_json(body["object"], "object");
      const auto options =
          body.contains("options") ? io::grasp_options_from_json(body["options"], "options") : finger::GraspOptions{};
      task = [st, object, options](JobContext& ctx) {
        if (!ctx.report(0.0)) throw CancelledError("cancelled");
        return io::to_json(finger::simulate_grasp(st->project.finger, object, options));
      };
      break;
    }
    case JobKind::calibrate: {
      double step = st->project.calibration.grid_step_deg;
      if (body.contains("grid_step_deg")) {
        if (!body["grid_step_deg"].is_number() || !(body["grid_step_deg"].get<double>() > 0))
          throw ValidationError("expected a positive number", "grid_step_deg");
        step = body["grid_step_deg"].get<double>();
      }
      perception::PipelineOptions pipeline;
      if (body.contains("pipeline")) pipeline = io::pipeline_options_from_json(body["pipeline"], "pipeline");
      task = [st, step, pipeline](JobContext& ctx) {
        perception::RenderOptions render;
        render.scene = st->project.scene;
        const auto table = perception::build_calibration(st->project.finger, step, render, pipeline,
                                                         [&](double f) { return ctx.report(f); });
        return io::to_json(table);
      };
      break;
    }
  }
  const std::string job = runner_.submit(kind, id, st->revision, std::move(task));
  return json_response(202, to_json(*runner_.get(job)), st->revision);
}

Response Service::get_job(const std::string& id) {
  const auto info = runner_.get(id);
  if (!info) throw HttpError{404, "unknown job '" + id + "'"};
  return json_response(200, to_json(*info), info->revision);
}

Response Service::cancel_job(const std::string& id) {
  if (!runner_.cancel(id)) throw HttpError{404, "unknown job '" + id + "'"};
  const auto info = runner_.get(id);
  return json_response(200, to_json(*info), info->revision);
}

Response Service::list_jobs() {
  Json jobs = Json::array();
  for (auto info : runner_.list()) {
    info.result.reset();
    info.partial.reset();
    jobs.push_back(to_json(info));
  }
  return json_response(200, Json{{"jobs", jobs}}, std::nullopt);
}

}  // namespace linkfold::studio
