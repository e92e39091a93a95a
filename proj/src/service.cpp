#include "nano/service.hpp"

#include "nano/log.hpp"
#include "nano/vocab.hpp"

#include "httplib.h"

#include <cstdlib>
#include <iostream>

namespace nano {

namespace {

ApiResult error(int status, const std::string& message, const std::string& field = {}) {
  nlohmann::json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, std::move(body)};
}

int status_of(SessionError::Code c) {
  switch (c) {
    case SessionError::Code::not_found: return 404;
    case SessionError::Code::cap_exceeded: return 403;
    case SessionError::Code::conflict:
    case SessionError::Code::wrong_phase: return 409;
  }
  return 500;
}

// Runs a mutation, mapping library errors onto HTTP statuses.
template <class F>
ApiResult guarded(F&& f) {
  try {
    return f();
  } catch (const SessionError& e) {
    return error(status_of(e.code()), e.what());
  } catch (const std::out_of_range& e) {
    return error(422, e.what(), "rating");
  } catch (const std::invalid_argument& e) {
    return error(422, e.what(), "text");
  }
}

std::optional<nlohmann::json> parse_object(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::optional<int> int_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) return std::nullopt;
  return j.at(key).get<int>();
}

bool has_final_report(const SessionLog& log) {
  for (const auto& e : log.events()) {
    if (e.at("type") == "metrics_snapshot" && e.value("final", false)) return true;
  }
  return false;
}

}  // namespace

AnnotationService::AnnotationService(World world, SessionConfig cfg, const std::filesystem::path& data_dir)
    : log_path_(data_dir / "session.jsonl"), session_(std::move(world), std::move(cfg), SessionLog(log_path_)) {
  std::unique_lock lock(mu_);
  if (!session_.finished() && !session_.batch_open()) {
    start_job(Job::generating);
  } else if (session_.finished() && !has_final_report(session_.log())) {
    start_job(Job::training);  // only the final evaluation is left
  }
}

AnnotationService::~AnnotationService() {
  if (worker_.joinable()) worker_.join();
}

void AnnotationService::start_job(Job job) {
  {
    std::lock_guard g(job_mu_);
    job_ = job;
    job_error_.clear();
  }
  if (worker_.joinable()) worker_.join();
  worker_ = std::thread([this, job] { run_job(job); });
}

// Drafts read the session without the lock: every mutation is refused while a
// job is in flight, and the commit below is the only writer.
void AnnotationService::run_job(Job job) {
  try {
    if (job == Job::training && !session_.finished()) {
      auto draft = session_.draft_training();
      std::unique_lock lock(mu_);
      session_.commit_training(std::move(draft));
    }
    if (!session_.finished()) {
      {
        std::lock_guard g(job_mu_);
        job_ = Job::generating;
      }
      auto draft = session_.draft_batch();
      std::unique_lock lock(mu_);
      session_.commit_batch(std::move(draft));
    } else if (!has_final_report(session_.log())) {
      const auto& c = session_.config();
      const auto report = session_.evaluate_final(session_targets(c, session_.world().labeler), c.eval_samples, false);
      std::unique_lock lock(mu_);
      session_.record_final(report);
    }
  } catch (const std::exception& e) {
    warn(std::string("service: background job failed: ") + e.what());
    std::lock_guard g(job_mu_);
    job_error_ = e.what();
  }
  std::lock_guard g(job_mu_);
  job_ = Job::none;
  job_cv_.notify_all();
}

void AnnotationService::wait_idle() {
  std::unique_lock g(job_mu_);
  job_cv_.wait(g, [this] { return job_ == Job::none; });
}

ApiResult AnnotationService::busy() const { return error(409, "a " + phase_locked() + " job is running"); }

std::string AnnotationService::phase_locked() const {
  Job job;
  {
    std::lock_guard g(job_mu_);
    job = job_;
  }
  if (job == Job::generating) return "generating";
  if (job == Job::training) return "training";
  return session_.phase() == Phase::awaiting_feedback ? "awaiting_feedback" : "idle";
}

std::string AnnotationService::phase() const {
  std::shared_lock lock(mu_);
  return phase_locked();
}

bool AnnotationService::finished() const {
  std::shared_lock lock(mu_);
  return session_.finished();
}

nlohmann::json AnnotationService::sample_json(const SampleRecord& s) const {
  const auto& v = session_.world().vocab;
  std::vector<TokenId> prompt, completion;
  for (std::size_t i = 0; i < s.seq.size(); ++i) {
    const TokenId t = s.seq.ids[i];
    if (t == v.bos() || t == v.eos()) continue;
    (i < s.seq.prompt_len ? prompt : completion).push_back(t);
  }
  nlohmann::json j = {{"id", s.id},
                      {"prompt", v.decode(prompt)},
                      {"completion", v.decode(completion)},
                      {"iteration", s.iteration},
                      {"status", std::string(to_string(s.status))},
                      {"origin", std::string(to_string(s.origin))},
                      {"controlled", s.controlled}};
  j["rating"] = s.rating ? nlohmann::json(*s.rating) : nlohmann::json(nullptr);
  return j;
}

ApiResult AnnotationService::get_session() const {
  std::shared_lock lock(mu_);
  std::size_t pending = 0, rated = 0, skipped = 0, total = 0;
  for (const auto& s : session_.samples()) {
    if (s.iteration != session_.iteration() || s.origin != Origin::generated) continue;
    ++total;
    pending += s.status == SampleStatus::pending;
    rated += s.status == SampleStatus::rated;
    skipped += s.status == SampleStatus::skipped;
  }
  nlohmann::json body = {{"config", to_json(session_.config())},
                         {"iteration", session_.iteration()},
                         {"iterations", session_.config().iterations},
                         {"phase", phase_locked()},
                         {"finished", session_.finished()},
                         {"max_rating", max_rating(session_.config().critic.nu)},
                         {"progress",
                          {{"pending", pending},
                           {"rated", rated},
                           {"skipped", skipped},
                           {"total", total},
                           {"all_resolved", session_.batch_open() && session_.all_resolved()},
                           {"manual_used", session_.manual_count()},
                           {"manual_cap", kMaxManualSamples}}}};
  std::lock_guard g(job_mu_);
  body["error"] = job_error_.empty() ? nlohmann::json(nullptr) : nlohmann::json(job_error_);
  return {200, std::move(body)};
}

ApiResult AnnotationService::get_samples(const std::string& status) const {
  if (!status.empty() && status != "pending" && status != "rated" && status != "skipped") {
    return error(400, "status must be pending, rated or skipped", "status");
  }
  std::shared_lock lock(mu_);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : session_.samples()) {
    if (status.empty() || to_string(s.status) == status) out.push_back(sample_json(s));
  }
  return {200, std::move(out)};
}

ApiResult AnnotationService::rate(int id, const std::string& body) {
  const auto j = parse_object(body);
  if (!j) return error(400, "body must be a JSON object");
  const auto rating = int_field(*j, "rating");
  if (!rating) return error(400, "rating must be an integer", "rating");
  std::unique_lock lock(mu_);
  if (phase_locked() == "generating" || phase_locked() == "training") return busy();
  return guarded([&] {
    session_.rate(id, *rating);
    return ApiResult{204, nullptr};
  });
}

ApiResult AnnotationService::skip(int id) {
  std::unique_lock lock(mu_);
  if (phase_locked() == "generating" || phase_locked() == "training") return busy();
  return guarded([&] {
    session_.skip(id);
    return ApiResult{204, nullptr};
  });
}

ApiResult AnnotationService::add_manual(const std::string& body) {
  const auto j = parse_object(body);
  if (!j) return error(400, "body must be a JSON object");
  if (!j->contains("text") || !j->at("text").is_string()) return error(400, "text must be a string", "text");
  const auto rating = int_field(*j, "rating");
  if (!rating) return error(400, "rating must be an integer", "rating");
  std::unique_lock lock(mu_);
  if (phase_locked() == "generating" || phase_locked() == "training") return busy();
  return guarded([&] {
    const int id = session_.add_manual(j->at("text").get<std::string>(), *rating);
    return ApiResult{201, sample_json(session_.sample(id))};
  });
}

ApiResult AnnotationService::advance() {
  std::unique_lock lock(mu_);
  const auto phase = phase_locked();
  if (phase == "generating" || phase == "training") return busy();
  if (session_.finished()) return error(409, "session is finished");
  if (!session_.batch_open()) {
    // A failed generation job left the iteration without a batch.
    start_job(Job::generating);
    return {202, {{"phase", "generating"}}};
  }
  if (!session_.all_resolved()) {
    return error(409, std::to_string(session_.pending_count()) + " sample(s) still pending");
  }
  const auto& c = session_.config();
  if (c.stop_accuracy && session_.batch_report().accuracy >= *c.stop_accuracy) {
    session_.stop("batch accuracy reached the stop threshold");
    start_job(Job::training);  // final evaluation only
    return {202, {{"phase", "training"}, {"stopped", true}}};
  }
  start_job(Job::training);
  return {202, {{"phase", "training"}}};
}

ApiResult AnnotationService::get_metrics() const {
  std::shared_lock lock(mu_);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : session_.log().events()) {
    if (e.at("type") != "metrics_snapshot") continue;
    history.push_back({{"iteration", e.at("iteration")}, {"final", e.value("final", false)}, {"report", e.at("report")}});
  }
  const auto& latest = session_.latest_metrics();
  return {200, {{"latest", latest ? to_json(*latest) : nlohmann::json(nullptr)}, {"history", std::move(history)}}};
}

void AnnotationService::mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir) {
  auto reply = [](httplib::Response& res, const ApiResult& r) {
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  auto id_of = [](const httplib::Request& req) { return std::stoi(req.matches[1].str()); };

  server.Get("/api/session", [=, this](const httplib::Request&, httplib::Response& res) { reply(res, get_session()); });
  server.Get("/api/samples", [=, this](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_samples(req.has_param("status") ? req.get_param_value("status") : ""));
  });
  server.Post(R"(/api/samples/(\d+)/rating)", [=, this](const httplib::Request& req, httplib::Response& res) {
    reply(res, rate(id_of(req), req.body));
  });
  server.Post(R"(/api/samples/(\d+)/skip)",
              [=, this](const httplib::Request& req, httplib::Response& res) { reply(res, skip(id_of(req))); });
  server.Post("/api/samples",
              [=, this](const httplib::Request& req, httplib::Response& res) { reply(res, add_manual(req.body)); });
  server.Post("/api/phase/advance", [=, this](const httplib::Request&, httplib::Response& res) { reply(res, advance()); });
  server.Get("/api/metrics", [=, this](const httplib::Request&, httplib::Response& res) { reply(res, get_metrics()); });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json");
  });
  if (static_dir && !server.set_mount_point("/", static_dir->string())) {
    throw std::invalid_argument("static directory does not exist: " + static_dir->string());
  }
}

int resolve_port(std::optional<int> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("NANO_LOOP_PORT"); env && *env) {
    const int port = std::atoi(env);
    if (port <= 0 || port > 65535) throw std::invalid_argument(std::string("NANO_LOOP_PORT is not a port: ") + env);
    return port;
  }
  return 8080;
}

bool serve(AnnotationService& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir) {
  httplib::Server server;
  service.mount(server, static_dir);
  std::cerr << "service: listening on http://" << host << ':' << port << std::endl;
  return server.listen(host, port);
}

}  // namespace nano
