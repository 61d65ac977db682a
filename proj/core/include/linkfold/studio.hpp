#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "linkfold/io.hpp"

/// Transport-independent core of the studio service: sessions with
/// revisions, pure per-revision queries and a bounded job runner. An HTTP
/// adapter only has to translate requests into `Request` and back.
namespace linkfold::studio {

// --- jobs ---------------------------------------------------------------------

enum class JobKind { optimize_linkage, optimize_optics, grasp, calibrate };
enum class JobState { queued, running, done, failed };

const char* job_kind_name(JobKind k);
const char* job_state_name(JobState s);

struct JobInfo {
  std::string id;
  JobKind kind = JobKind::grasp;
  JobState state = JobState::queued;
  double progress = 0.0;
  std::string session;
  std::uint64_t revision = 0;  ///< session revision the job computes against
  bool cancel_requested = false;
  bool cancelled = false;
  std::string error;
  std::optional<io::Json> result;   ///< set when done
  std::optional<io::Json> partial;  ///< latest incumbent, kept on cancellation
  std::uint64_t sequence = 0;       ///< submission order
  double queued_at = 0.0;           ///< seconds since the runner started
  std::optional<double> started_at;
  std::optional<double> finished_at;
};

io::Json to_json(const JobInfo& job);

class JobRunner;

/// Handle given to a running task.
class JobContext {
 public:
  /// Records progress (clamped to be nondecreasing) and optionally the
  /// current incumbent. Returns false once cancellation was requested.
  bool report(double progress, const io::Json* incumbent = nullptr);
  bool cancel_requested() const;

 private:
  friend class JobRunner;
  JobContext(JobRunner* runner, std::string id) : runner_(runner), id_(std::move(id)) {}
  JobRunner* runner_;
  std::string id_;
};

/// FIFO queue drained by a fixed pool of workers. Task exceptions mark the
/// job failed; CancelledError (or finishing after a cancel request) marks
/// it failed with error "cancelled", keeping the last reported incumbent.
class JobRunner {
 public:
  using Task = std::function<io::Json(JobContext&)>;

  explicit JobRunner(std::size_t concurrency = 2);
  ~JobRunner();
  JobRunner(const JobRunner&) = delete;
  JobRunner& operator=(const JobRunner&) = delete;

  std::string submit(JobKind kind, std::string session, std::uint64_t revision, Task task);
  std::optional<JobInfo> get(const std::string& id) const;
  std::vector<JobInfo> list() const;
  /// False when the job is unknown. Queued jobs fail immediately; running
  /// ones at their next progress report.
  bool cancel(const std::string& id);
  /// Blocks until the job reaches a terminal state or the timeout expires.
  std::optional<JobInfo> wait(const std::string& id, std::chrono::milliseconds timeout) const;
  std::size_t concurrency() const { return workers_.size(); }
  /// Cancels everything outstanding and joins the workers.
  void shutdown();

 private:
  friend class JobContext;
  struct Entry {
    JobInfo info;
    Task task;
  };
  void work();
  double now() const;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;        // queue and state changes
  std::map<std::string, Entry> jobs_;
  std::deque<std::string> queue_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
  std::uint64_t next_ = 1;
  std::chrono::steady_clock::time_point epoch_ = std::chrono::steady_clock::now();
};

// --- service -------------------------------------------------------------------

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::optional<std::uint64_t> revision;  ///< also sent as the X-Revision header
};

struct ServiceOptions {
  std::size_t concurrency = 2;
  std::optional<io::ProjectFile> default_project;  ///< POST /sessions with an empty body
  std::optional<std::filesystem::path> snapshot_path;  ///< written by shutdown()
};

class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();

  /// Routes one request; never throws.
  Response handle(const Request& request);

  /// Loads a project into a new session at revision 1 and returns its id.
  std::string create_session(io::ProjectFile project);
  JobRunner& jobs() { return runner_; }
  /// Sessions with their current revisions and projects.
  io::Json snapshot() const;
  /// Stops the job runner and writes the snapshot when configured.
  void shutdown();

  struct State {
    io::ProjectFile project;
    std::uint64_t revision = 1;
  };

 private:
  std::shared_ptr<const State> state_of(const std::string& id) const;
  std::pair<std::string, std::shared_ptr<const State>> resolve(const Request& r) const;
  Response dispatch(const Request& r);

  Response post_session(const Request& r);
  Response get_session(const std::string& id);
  Response patch_scene(const std::string& id, const Request& r);
  Response get_solve(const Request& r);
  Response get_trace(const Request& r);
  Response get_coverage(const Request& r);
  Response get_render(const Request& r);
  Response post_job(JobKind kind, const Request& r);
  Response get_job(const std::string& id);
  Response cancel_job(const std::string& id);
  Response list_jobs();

  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const State>> sessions_;
  std::string latest_;
  std::uint64_t next_session_ = 1;
  bool shut_down_ = false;
  JobRunner runner_;
};

/// Parses "pip,dip" in degrees.
std::pair<double, double> parse_config(const std::string& text, const std::string& field = "config");

}  // namespace linkfold::studio
