#pragma once

// HTTP front end for the annotation store and pipeline runs.
//
//   GET  /taxonomy
//   GET  /items/next?annotator=ID
//   POST /items/{id}/events      {annotator_id, type, payload}
//   POST /items/{id}/finalize    {annotator_id}
//   GET  /export/annotations     JSONL bundle of finalized items
//   POST /runs                   pipeline config (JSON) -> 202 {run_id}
//   GET  /runs/{id}/manifest
//
// The annotator may also be given in an X-Annotator-Id header.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "revchain/error.hpp"
#include "revchain/generation_client.hpp"
#include "revchain/jsonl.hpp"
#include "revchain/pipeline.hpp"
#include "revchain/store.hpp"
#include "revchain/taxonomy.hpp"

namespace revchain {

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::exhausted:
    case ErrorKind::not_found: return 404;
    case ErrorKind::ownership_error: return 403;
    case ErrorKind::incomplete_error: return 409;
    case ErrorKind::parse_error:
    case ErrorKind::schema_error:
    case ErrorKind::invalid_input:
    case ErrorKind::bounds_error:
    case ErrorKind::empty_span_error:
    case ErrorKind::taxonomy_error:
    case ErrorKind::config_error:
    case ErrorKind::nothing_to_do: return 422;
    default: return 500;
  }
}

using ClientFactory = std::function<std::shared_ptr<GenerationClient>()>;

// Runs the pipeline on a background thread, one run at a time.
class RunManager {
 public:
  enum class Status { running, succeeded, failed };

  RunManager(std::filesystem::path runs_dir, ClientFactory factory)
      : dir_(std::move(runs_dir)), factory_(std::move(factory)) {}

  ~RunManager() { wait(); }

  RunManager(const RunManager&) = delete;
  RunManager& operator=(const RunManager&) = delete;

  // Returns nullopt while another run is in flight. Throws nothing_to_do for
  // an empty bundle.
  std::optional<std::string> start(std::vector<FinalizedItem> items, PipelineConfig cfg) {
    if (items.empty()) throw Error(ErrorKind::nothing_to_do, "no completed annotations");
    std::lock_guard lock(mu_);
    if (busy_) return std::nullopt;
    if (worker_.joinable()) worker_.join();
    const std::string id = "run-" + std::to_string(++counter_);
    cfg.output_dir = dir_ / id;
    runs_[id] = Run{Status::running, Json(nullptr), ""};
    busy_ = true;
    worker_ = std::thread([this, id, items = std::move(items), cfg = std::move(cfg)] {
      Run result;
      try {
        auto client = factory_();
        result = Run{Status::succeeded, to_json_value(run_pipeline(items, cfg, *client)), ""};
      } catch (const std::exception& e) {
        result = Run{Status::failed, Json(nullptr), e.what()};
      }
      std::lock_guard done(mu_);
      runs_[id] = std::move(result);
      busy_ = false;
      cv_.notify_all();
    });
    return id;
  }

  bool busy() const {
    std::lock_guard lock(mu_);
    return busy_;
  }

  void wait() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !busy_; });
    if (worker_.joinable()) {
      auto t = std::move(worker_);
      lock.unlock();
      t.join();
    }
  }

  // {status, manifest | error}
  Json describe(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = runs_.find(id);
    if (it == runs_.end()) throw Error(ErrorKind::not_found, "no run " + id);
    const auto& r = it->second;
    switch (r.status) {
      case Status::running: return Json{{"run_id", id}, {"status", "running"}};
      case Status::failed: return Json{{"run_id", id}, {"status", "failed"}, {"error", r.error}};
      case Status::succeeded: return Json{{"run_id", id}, {"status", "succeeded"}, {"manifest", r.manifest}};
    }
    return {};
  }

 private:
  struct Run {
    Status status = Status::running;
    Json manifest;
    std::string error;
  };

  std::filesystem::path dir_;
  ClientFactory factory_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Run> runs_;
  std::thread worker_;
  bool busy_ = false;
  int counter_ = 0;
};

class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, RunManager& runs, const AttributeTaxonomy& tax = default_taxonomy())
      : store_(store), runs_(runs), tax_(tax) {
    routes();
  }

  ~AnnotationServer() { stop(); }

  // Binds to `port` (0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorKind::io_error, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port) {
    if (!http_.listen(host, port)) throw Error(ErrorKind::io_error, "cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    if (http_.is_running()) http_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const Error& e) {
    send_json(res, http_status(e.kind()), Json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const Json::exception& e) {
      send_error(res, Error(ErrorKind::schema_error, e.what()));
    }
  }

  static Json body_json(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    auto j = parse_json(req.body, "request body");
    if (!j.is_object()) throw Error(ErrorKind::schema_error, "request body must be a JSON object");
    return j;
  }

  static std::string annotator_of(const httplib::Request& req, const Json& body) {
    if (body.contains("annotator_id")) return body.at("annotator_id").get<std::string>();
    if (req.has_param("annotator")) return req.get_param_value("annotator");
    if (req.has_header("X-Annotator-Id")) return req.get_header_value("X-Annotator-Id");
    throw Error(ErrorKind::ownership_error, "no annotator id given");
  }

  void routes() {
    http_.Get("/taxonomy", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, tax_.to_json());
    });
    http_.Get("/items/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, store_.next_item(annotator_of(req, Json::object()))); });
    });
    http_.Post(R"(/items/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = body_json(req);
        const auto type = parse_event_type(body.at("type").get<std::string>());
        const auto ack = store_.submit(annotator_of(req, body), req.matches[1], type,
                                       body.value("payload", Json::object()));
        send_json(res, 200, to_json_value(ack));
      });
    });
    http_.Post(R"(/items/([^/]+)/finalize)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = body_json(req);
        send_json(res, 200, store_.finalize(annotator_of(req, body), req.matches[1]));
      });
    });
    http_.Get("/export/annotations", [this](const httplib::Request&, httplib::Response& res) {
      res.status = 200;
      res.set_content(store_.export_annotations(), "application/x-ndjson");
    });
    http_.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto id = runs_.start(store_.completed(), body_json(req).get<PipelineConfig>());
        if (!id) {
          send_json(res, 409, Json{{"error", "busy"}, {"message", "a pipeline run is already in progress"}});
          return;
        }
        send_json(res, 202, Json{{"run_id", *id}});
      });
    });
    http_.Get(R"(/runs/([^/]+)/manifest)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto d = runs_.describe(req.matches[1]);
        const auto status = d.at("status").get<std::string>();
        if (status == "succeeded") {
          send_json(res, 200, d.at("manifest"));
        } else {
          send_json(res, status == "running" ? 202 : 500, d);
        }
      });
    });
  }

  AnnotationStore& store_;
  RunManager& runs_;
  const AttributeTaxonomy& tax_;
  httplib::Server http_;
  std::thread thread_;
};

}  // namespace revchain
