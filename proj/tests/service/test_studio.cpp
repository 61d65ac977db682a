#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

#include "linkfold/design.hpp"
#include "linkfold/error.hpp"
#include "linkfold/finger.hpp"
#include "linkfold/io.hpp"
#include "linkfold/optics.hpp"
#include "linkfold/perception.hpp"
#include "linkfold/studio.hpp"
#include "studio_http.hpp"

using namespace linkfold;
using namespace std::chrono_literals;
using studio::JobState;
using Json = io::Json;

namespace {

studio::Response call(studio::Service& s, std::string method, std::string path,
                      std::map<std::string, std::string> query = {}, std::string body = {}) {
  return s.handle({std::move(method), std::move(path), std::move(query), std::move(body)});
}

Json body(const studio::Response& r) { return io::parse(r.body); }

studio::JobInfo finish(studio::Service& s, const std::string& job, std::chrono::milliseconds timeout = 120s) {
  auto info = s.jobs().wait(job, timeout);
  REQUIRE(info);
  REQUIRE((info->state == JobState::done || info->state == JobState::failed));
  return *info;
}

}  // namespace

TEST_SUITE("job runner") {
  TEST_CASE("concurrency defaults to two and must be positive") {
    studio::JobRunner r;
    CHECK(r.concurrency() == 2);
    CHECK_THROWS_AS(studio::JobRunner(0), ValidationError);
  }

  TEST_CASE("an empty queue produces no jobs") {
    studio::JobRunner r(1);
    std::this_thread::sleep_for(20ms);
    CHECK(r.list().empty());
    CHECK_FALSE(r.get("j1"));
    CHECK_FALSE(r.cancel("j1"));
  }

  TEST_CASE("concurrency one starts jobs strictly in sequence") {
    studio::JobRunner r(1);
    auto sleeper = [](studio::JobContext&) {
      std::this_thread::sleep_for(30ms);
      return Json{{"ok", true}};
    };
    const auto a = r.submit(studio::JobKind::grasp, "s1", 1, sleeper);
    const auto b = r.submit(studio::JobKind::grasp, "s1", 1, sleeper);
    const auto ia = r.wait(a, 5s), ib = r.wait(b, 5s);
    REQUIRE(ia);
    REQUIRE(ib);
    REQUIRE(ia->finished_at);
    REQUIRE(ib->started_at);
    CHECK(*ib->started_at >= *ia->finished_at);
    CHECK(*ib->started_at > *ia->started_at);
    CHECK(ia->sequence < ib->sequence);
  }

  TEST_CASE("progress never decreases and done implies a result") {
    studio::JobRunner r(1);
    std::vector<double> seen;
    std::string id;
    std::mutex m;
    const auto job = r.submit(studio::JobKind::grasp, "s1", 1, [&](studio::JobContext& ctx) {
      for (double p : {0.5, 0.2, 0.7, 0.6, 1.4}) {
        ctx.report(p);
        std::lock_guard lk(m);
        seen.push_back(r.get(id)->progress);
      }
      return Json{{"value", 3}};
    });
    {
      std::lock_guard lk(m);
      id = job;
    }
    const auto info = r.wait(job, 5s);
    REQUIRE(info);
    CHECK(info->state == JobState::done);
    REQUIRE(info->result);
    CHECK((*info->result)["value"] == 3);
    CHECK(info->progress == 1.0);
    REQUIRE(seen.size() == 5);
    CHECK(seen == std::vector<double>{0.5, 0.5, 0.7, 0.7, 1.0});
  }

  TEST_CASE("cancelling a running job keeps the last incumbent") {
    studio::JobRunner r(1);
    std::atomic<int> reports{0};
    const auto job = r.submit(studio::JobKind::optimize_linkage, "s1", 1, [&](studio::JobContext& ctx) -> Json {
      for (int i = 0;; ++i) {
        const Json inc{{"step", i}};
        if (!ctx.report(i * 1e-3, &inc)) throw CancelledError("cancelled");
        ++reports;
        std::this_thread::sleep_for(1ms);
      }
    });
    while (reports < 5) std::this_thread::sleep_for(1ms);
    CHECK(r.cancel(job));
    const auto info = r.wait(job, 5s);
    REQUIRE(info);
    CHECK(info->state == JobState::failed);
    CHECK(info->cancelled);
    CHECK(info->error == "cancelled");
    REQUIRE(info->partial);
    CHECK((*info->partial)["step"].get<int>() >= 4);
    CHECK_FALSE(info->result);
  }

  TEST_CASE("cancelling a queued job fails it without running") {
    studio::JobRunner r(1);
    std::atomic<bool> release{false}, ran{false};
    const auto blocker = r.submit(studio::JobKind::grasp, "s1", 1, [&](studio::JobContext&) {
      while (!release) std::this_thread::sleep_for(1ms);
      return Json{};
    });
    const auto queued = r.submit(studio::JobKind::grasp, "s1", 1, [&](studio::JobContext&) {
      ran = true;
      return Json{};
    });
    CHECK(r.cancel(queued));
    CHECK(r.get(queued)->state == JobState::failed);
    release = true;
    r.wait(blocker, 5s);
    r.shutdown();
    CHECK_FALSE(ran);
  }

  TEST_CASE("a throwing task fails with its diagnostic and the pool keeps working") {
    studio::JobRunner r(1);
    const auto bad = r.submit(studio::JobKind::grasp, "s1", 1, [](studio::JobContext&) -> Json {
      throw std::runtime_error("worker exploded");
    });
    const auto good = r.submit(studio::JobKind::grasp, "s1", 1, [](studio::JobContext&) { return Json{{"ok", 1}}; });
    const auto ib = r.wait(bad, 5s), ig = r.wait(good, 5s);
    REQUIRE(ib);
    REQUIRE(ig);
    CHECK(ib->state == JobState::failed);
    CHECK(ib->error.find("worker exploded") != std::string::npos);
    CHECK_FALSE(ib->cancelled);
    CHECK(ig->state == JobState::done);
  }
}

TEST_SUITE("service queries") {
  TEST_CASE("sessions are created at revision one") {
    studio::Service s;
    const auto r = call(s, "POST", "/sessions");
    CHECK(r.status == 201);
    CHECK(r.revision == 1u);
    const auto j = body(r);
    CHECK(j["revision"] == 1);
    const std::string id = j["session"];
    const auto g = call(s, "GET", "/sessions/" + id);
    CHECK(g.status == 200);
    CHECK(body(g)["project"]["name"] == "gellink-reference");
  }

  TEST_CASE("solve at zero actuation holds DIP at the spring rest angle") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto r = call(s, "GET", "/solve", {{"actuator", "0"}});
    REQUIRE(r.status == 200);
    const auto ref = io::reference_project();
    CHECK(body(r)["state"]["config"]["dip_deg"].get<double>() == ref.finger.spring.rest_deg);
    CHECK(r.revision == 1u);
    CHECK(body(r)["revision"] == 1);
  }

  TEST_CASE("solve payload is the serialized free-motion solution") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto ref = io::reference_project();
    for (double a : {0.0, 12.5, 30.0, 48.0}) {
      const auto r = call(s, "GET", "/solve", {{"actuator", io::format_number(a)}});
      REQUIRE(r.status == 200);
      const auto expected = io::to_json(ref.finger, finger::free_motion_solution(ref.finger, a));
      CHECK(io::dump(body(r)["state"]) == io::dump(expected));
    }
  }

  TEST_CASE("coverage at the straight configuration equals visibility") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto ref = io::reference_project();
    const auto r = call(s, "GET", "/coverage", {{"config", "0,0"}});
    REQUIRE(r.status == 200);
    const auto direct = optics::visibility(optics::build_scene(ref.finger, ref.scene, 0, 0));
    CHECK(io::dump(body(r)["visibility"]) == io::dump(io::to_json(direct, false)));
    const auto with_pixels = call(s, "GET", "/coverage", {{"config", "0,0"}, {"pixels", "1"}});
    CHECK(io::dump(body(with_pixels)["visibility"]) == io::dump(io::to_json(direct, true)));
  }

  TEST_CASE("trace and render match the module calls") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto ref = io::reference_project();
    const auto scene = optics::build_scene(ref.finger, ref.scene, 20, 35);
    const auto t = call(s, "GET", "/trace", {{"config", "20,35"}, {"stride", "7"}});
    REQUIRE(t.status == 200);
    std::vector<optics::RayPath> rays;
    for (int px = 0; px < scene.camera.pixels; px += 7) rays.push_back(optics::trace_ray(scene, px));
    CHECK(io::dump(body(t)["rays"]) == io::dump(io::to_json(rays)["rays"]));

    const auto img = call(s, "GET", "/render", {{"config", "20,35"}});
    REQUIRE(img.status == 200);
    CHECK(img.content_type == "image/x-portable-graymap");
    CHECK(img.revision == 1u);
    perception::RenderOptions o;
    o.scene = ref.scene;
    CHECK(img.body == io::write_pgm(perception::synth_render(ref.finger, 20, 35, {}, o)));
  }

  TEST_CASE("repeated GETs at one revision return identical bodies") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const std::vector<std::pair<std::string, std::map<std::string, std::string>>> gets{
        {"/solve", {{"actuator", "22.5"}}},
        {"/solve", {{"actuator", "40"}, {"dip", "10"}}},
        {"/trace", {{"config", "45,60"}, {"stride", "11"}}},
        {"/coverage", {{"config", "45,60"}}},
        {"/render", {{"config", "45,60"}}},
    };
    for (const auto& [path, q] : gets) {
      const auto a = call(s, "GET", path, q);
      // Interleave other work so any hidden state would show up.
      call(s, "GET", "/solve", {{"actuator", "5"}});
      const auto b = call(s, "GET", path, q);
      CHECK_MESSAGE(a.status == 200, path);
      CHECK_MESSAGE(a.body == b.body, path);
    }
  }

  TEST_CASE("query endpoints answer within 100 ms") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const std::vector<std::pair<std::string, std::map<std::string, std::string>>> gets{
        {"/solve", {{"actuator", "56"}}},       {"/solve", {{"actuator", "35"}, {"dip", "80"}}},
        {"/trace", {{"config", "90,90"}}},      {"/coverage", {{"config", "90,90"}, {"pixels", "1"}}},
        {"/coverage", {{"config", "30,70"}}},   {"/render", {{"config", "90,90"}}},
        {"/render", {{"config", "0,0"}}},
    };
    for (const auto& [path, q] : gets) {
      double worst = 0;
      for (int k = 0; k < 3; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = call(s, "GET", path, q);
        worst = std::max(worst, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        REQUIRE(r.status == 200);
      }
      CHECK_MESSAGE(worst < 100.0, path << " took " << worst << " ms");
    }
  }
}

TEST_SUITE("service errors") {
  TEST_CASE("status codes") {
    studio::Service s;
    const std::string id = body(call(s, "POST", "/sessions"))["session"];

    SUBCASE("400 for malformed input, naming the field") {
      auto r = call(s, "GET", "/solve", {{"actuator", "abc"}});
      CHECK(r.status == 400);
      CHECK(body(r)["error"]["field"] == "actuator");
      CHECK(body(r)["revision"] == 1);
      r = call(s, "GET", "/solve");
      CHECK(r.status == 400);
      r = call(s, "GET", "/coverage", {{"config", "10"}});
      CHECK(r.status == 400);
      CHECK(body(r)["error"]["field"] == "config");
      r = call(s, "POST", "/sessions", {}, "{not json");
      CHECK(r.status == 400);
      r = call(s, "POST", "/sessions", {}, R"({"format":99,"kind":"project"})");
      CHECK(r.status == 400);
      CHECK(body(r)["error"]["field"] == "format");
      r = call(s, "POST", "/grasp", {}, "{}");
      CHECK(r.status == 400);
      CHECK(body(r)["error"]["field"] == "object");
    }
    SUBCASE("404 for unknown sessions, jobs and routes") {
      CHECK(call(s, "GET", "/sessions/nope").status == 404);
      CHECK(call(s, "GET", "/solve", {{"actuator", "0"}, {"session", "nope"}}).status == 404);
      CHECK(call(s, "GET", "/jobs/j999").status == 404);
      CHECK(call(s, "POST", "/jobs/j999/cancel").status == 404);
      CHECK(call(s, "GET", "/nowhere").status == 404);
    }
    SUBCASE("405 for the wrong method") { CHECK(call(s, "DELETE", "/solve").status == 405); }
    SUBCASE("409 for a stale revision") {
      const auto ok = call(s, "PATCH", "/sessions/" + id + "/scene", {}, R"({"revision":1,"scene":{"fov_deg":70}})");
      REQUIRE(ok.status == 200);
      CHECK(ok.revision == 2u);
      const auto stale = call(s, "PATCH", "/sessions/" + id + "/scene", {}, R"({"revision":1,"scene":{"fov_deg":71}})");
      CHECK(stale.status == 409);
      CHECK(body(stale)["revision"] == 2);
      CHECK(call(s, "GET", "/coverage", {{"config", "0,0"}, {"revision", "1"}}).status == 409);
    }
    SUBCASE("422 for infeasible configurations") {
      const auto r = call(s, "GET", "/solve", {{"actuator", "400"}});
      CHECK(r.status == 422);
      CHECK(body(r)["revision"] == 1);
      CHECK(call(s, "GET", "/coverage", {{"config", "120,0"}}).status == 422);
    }
    SUBCASE("unknown scene fields are rejected") {
      const auto r = call(s, "PATCH", "/sessions/" + id + "/scene", {}, R"({"revision":1,"scene":{"colour":1}})");
      CHECK(r.status == 400);
      CHECK(body(r)["error"]["field"] == "scene.colour");
      CHECK(body(call(s, "GET", "/sessions/" + id))["revision"] == 1);
    }
  }
}

TEST_SUITE("service mutations") {
  TEST_CASE("a scene patch bumps the revision and changes the queries") {
    studio::Service s;
    const std::string id = body(call(s, "POST", "/sessions"))["session"];
    const auto before = call(s, "GET", "/coverage", {{"config", "40,40"}});
    auto ref = io::reference_project();
    const auto p = call(s, "PATCH", "/sessions/" + id + "/scene", {},
                        R"({"revision":1,"scene":{"camera_tilt_deg":5,"fov_deg":60}})");
    REQUIRE(p.status == 200);
    CHECK(body(p)["revision"] == 2);
    const auto after = call(s, "GET", "/coverage", {{"config", "40,40"}});
    CHECK(after.revision == 2u);
    CHECK(body(before)["revision"] == 1);
    CHECK(body(after)["revision"] == 2);
    CHECK(body(before)["visibility"] != body(after)["visibility"]);

    ref.scene.camera_tilt_deg = 5;
    ref.scene.fov_deg = 60;
    const auto direct = optics::visibility(optics::build_scene(ref.finger, ref.scene, 40, 40));
    CHECK(io::dump(body(after)["visibility"]) == io::dump(io::to_json(direct, false)));

    // Revisions strictly increase per mutation.
    const auto p2 = call(s, "PATCH", "/sessions/" + id + "/scene", {}, R"({"revision":2,"scene":{"fov_deg":61}})");
    CHECK(p2.revision == 3u);
  }

  TEST_CASE("queries default to the most recent session") {
    studio::Service s;
    const std::string a = body(call(s, "POST", "/sessions"))["session"];
    const std::string b = body(call(s, "POST", "/sessions"))["session"];
    CHECK(a != b);
    call(s, "PATCH", "/sessions/" + b + "/scene", {}, R"({"revision":1,"scene":{"fov_deg":60}})");
    CHECK(call(s, "GET", "/solve", {{"actuator", "3"}}).revision == 2u);
    CHECK(call(s, "GET", "/solve", {{"actuator", "3"}, {"session", a}}).revision == 1u);
  }
}

TEST_SUITE("service jobs") {
  TEST_CASE("optimize jobs reproduce a direct run with the same seed") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto ref = io::reference_project();

    const auto lj = call(s, "POST", "/optimize/linkage", {}, R"({"budget":120,"seed":7})");
    REQUIRE(lj.status == 202);
    CHECK(body(lj)["kind"] == "optimize-linkage");
    const auto linfo = finish(s, body(lj)["id"]);
    REQUIRE(linfo.state == JobState::done);
    auto lspace = *ref.linkage_space;
    lspace.base = ref.finger;
    CHECK(io::dump(*linfo.result) == io::dump(io::to_json(design::optimize_linkage(lspace, 120, 7))));

    const auto oj = call(s, "POST", "/optimize/optics", {}, R"({"budget":80,"seed":11})");
    REQUIRE(oj.status == 202);
    const auto oinfo = finish(s, body(oj)["id"]);
    REQUIRE(oinfo.state == JobState::done);
    auto ospace = *ref.optics_space;
    ospace.finger = ref.finger;
    CHECK(io::dump(*oinfo.result) == io::dump(io::to_json(design::optimize_optics(ospace, 80, 11))));

    const auto poll = call(s, "GET", "/jobs/" + oinfo.id);
    CHECK(poll.status == 200);
    CHECK(poll.revision == 1u);
    CHECK(body(poll)["state"] == "done");
    CHECK(body(poll)["progress"] == 1);
    CHECK(body(poll).contains("result"));
  }

  TEST_CASE("grasp and calibrate jobs equal the module calls") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto ref = io::reference_project();
    finger::GraspObject obj;
    obj.center = {24, 30};
    obj.radius = 30;
    const Json req{{"object", io::to_json(obj)}};
    const auto g = call(s, "POST", "/grasp", {}, io::dump(req));
    REQUIRE(g.status == 202);
    const auto gi = finish(s, body(g)["id"]);
    REQUIRE(gi.state == JobState::done);
    CHECK(io::dump(*gi.result) == io::dump(io::to_json(finger::simulate_grasp(ref.finger, obj))));

    const auto c = call(s, "POST", "/calibrate", {}, R"({"grid_step_deg":30})");
    REQUIRE(c.status == 202);
    const auto ci = finish(s, body(c)["id"]);
    REQUIRE(ci.state == JobState::done);
    perception::RenderOptions o;
    o.scene = ref.scene;
    CHECK(io::dump(*ci.result) == io::dump(io::to_json(perception::build_calibration(ref.finger, 30.0, o))));
  }

  TEST_CASE("cancelling a running optimization reports the partial incumbent") {
    studio::Service s;
    call(s, "POST", "/sessions");
    const auto j = call(s, "POST", "/optimize/linkage", {}, R"({"budget":5000,"seed":3})");
    REQUIRE(j.status == 202);
    const std::string id = body(j)["id"];
    const auto deadline = std::chrono::steady_clock::now() + 60s;
    while (std::chrono::steady_clock::now() < deadline && body(call(s, "GET", "/jobs/" + id))["progress"].get<double>() <= 0)
      std::this_thread::sleep_for(5ms);
    const auto c = call(s, "POST", "/jobs/" + id + "/cancel");
    CHECK(c.status == 200);
    CHECK(body(c)["cancel_requested"] == true);
    const auto info = finish(s, id);
    CHECK(info.state == JobState::failed);
    CHECK(info.cancelled);
    CHECK(info.error == "cancelled");
    REQUIRE(info.partial);
    CHECK((*info.partial)["parameters"].size() == 12);
    CHECK(info.partial->contains("objective"));
    CHECK(info.progress < 1.0);
    const auto shown = body(call(s, "GET", "/jobs/" + id));
    CHECK(shown["state"] == "failed");
    CHECK(shown.contains("partial"));
  }

  TEST_CASE("concurrency one runs submitted optimizations one after another") {
    studio::ServiceOptions opts;
    opts.concurrency = 1;
    studio::Service s(opts);
    call(s, "POST", "/sessions");
    const std::string a = body(call(s, "POST", "/optimize/linkage", {}, R"({"budget":40})"))["id"];
    const std::string b = body(call(s, "POST", "/optimize/optics", {}, R"({"budget":40})"))["id"];
    const auto ia = finish(s, a), ib = finish(s, b);
    REQUIRE(ia.finished_at);
    REQUIRE(ib.started_at);
    CHECK(*ib.started_at >= *ia.finished_at);
    const auto list = body(call(s, "GET", "/jobs"));
    CHECK(list["jobs"].size() == 2);
  }

  TEST_CASE("shutdown writes a snapshot of the sessions") {
    const auto path = std::filesystem::temp_directory_path() / "linkfold_studio_snapshot.json";
    std::filesystem::remove(path);
    {
      studio::ServiceOptions opts;
      opts.snapshot_path = path;
      studio::Service s(opts);
      const std::string id = body(call(s, "POST", "/sessions"))["session"];
      call(s, "PATCH", "/sessions/" + id + "/scene", {}, R"({"revision":1,"scene":{"fov_deg":64}})");
      s.shutdown();
    }
    REQUIRE(std::filesystem::exists(path));
    const auto snap = io::parse(io::read_text(path));
    CHECK(snap["kind"] == "studio_snapshot");
    REQUIRE(snap["sessions"].size() == 1);
    CHECK(snap["sessions"][0]["revision"] == 2);
    std::filesystem::remove(path);
  }
}

TEST_CASE("HTTP adapter serves the service over a socket") {
  studio::Service s;
  studio::HttpServer server(s);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();

  httplib::Client c("127.0.0.1", port);
  auto health = c.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto created = c.Post("/sessions", "", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  CHECK(created->get_header_value("X-Revision") == "1");

  auto solved = c.Get("/solve?actuator=0");
  REQUIRE(solved);
  CHECK(solved->status == 200);
  const auto direct = call(s, "GET", "/solve", {{"actuator", "0"}});
  CHECK(solved->body == direct.body);

  auto img = c.Get("/render?config=10,10");
  REQUIRE(img);
  CHECK(img->get_header_value("Content-Type") == "image/x-portable-graymap");
  CHECK(img->body.substr(0, 2) == "P5");

  auto bad = c.Get("/solve?actuator=x");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  server.stop();
  t.join();
}

TEST_CASE("HTTP adapter serves the shipped schema") {
  studio::Service s;
  studio::HttpServer server(s, std::filesystem::path(LINKFOLD_OPENAPI));
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/openapi.yaml");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == io::read_text(LINKFOLD_OPENAPI));
  for (const char* route : {"/solve", "/trace", "/coverage", "/render", "/jobs", "/optimize/linkage", "/calibrate"})
    CHECK_MESSAGE(r->body.find(std::string("  ") + route + ":") != std::string::npos, route);
  server.stop();
  t.join();
}
