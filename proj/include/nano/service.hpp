#pragma once

// HTTP annotation service over one Session. Routes live under /api; bodies are
// JSON. Generation and training run on one background thread: the expensive
// draft happens off-lock, the commit (and its log events) under the write lock.
// Mutations that arrive while a job runs get 409.

#include "nano/session.hpp"

#include "json.hpp"

#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace nano {

struct ApiResult {
  int status = 200;
  nlohmann::json body;  // null for 204
};

class AnnotationService {
 public:
  // Opens (or resumes) data_dir/session.jsonl and kicks off generation if the
  // open iteration has no batch yet.
  AnnotationService(World world, SessionConfig cfg, const std::filesystem::path& data_dir);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  ApiResult get_session() const;
  ApiResult get_samples(const std::string& status) const;  // "" for all
  ApiResult rate(int id, const std::string& body);
  ApiResult skip(int id);
  ApiResult add_manual(const std::string& body);
  ApiResult advance();
  ApiResult get_metrics() const;

  // "generating", "awaiting_feedback", "training" or "idle".
  std::string phase() const;
  bool finished() const;
  // Blocks until no background job is running.
  void wait_idle();

  // Registers the routes on `server`; files under static_dir are served at /.
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = {});

  std::filesystem::path log_path() const { return log_path_; }

 private:
  enum class Job { none, generating, training };

  void start_job(Job job);  // caller holds the write lock
  void run_job(Job job);
  ApiResult busy() const;
  nlohmann::json sample_json(const SampleRecord& s) const;
  std::string phase_locked() const;

  std::filesystem::path log_path_;
  Session session_;

  mutable std::shared_mutex mu_;
  mutable std::mutex job_mu_;
  std::condition_variable job_cv_;
  Job job_ = Job::none;
  std::string job_error_;
  std::thread worker_;
};

// Host/port resolution: an explicit flag wins, then NANO_LOOP_PORT, then 8080.
int resolve_port(std::optional<int> flag);

// Blocks serving `service` until the server is stopped.
bool serve(AnnotationService& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir = {});

}  // namespace nano
