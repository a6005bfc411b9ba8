#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include "lmte/explain.hpp"
#include "lmte/oracle.hpp"

namespace httplib {
class Server;
}

namespace lmte {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Relative train/schema paths in requests resolve against this.
  std::filesystem::path base_dir = ".";
  /// When set, every created session is written as {id}.json here and
  /// reloaded at startup.
  std::optional<std::filesystem::path> snapshot_dir;
  /// Optional static assets (e.g. a built UI) mounted at /ui.
  std::optional<std::filesystem::path> static_dir;
  int threads = 4;
};

/// A session holds the training data and oracle and, when created with a
/// test point, the fitted neighborhood and tree. Immutable once stored.
struct ServiceSession {
  std::string id;
  json request;  // creation body, kept for snapshots
  Dataset train;
  std::shared_ptr<Oracle> oracle;
  SessionConfig config;
  FeatureSpace space;
  std::optional<FittedSession> fitted;
};

struct HttpResult {
  int status = 200;
  json body;
};

/// JSON-over-HTTP front end for explanation sessions. Request handling is
/// exposed through handle() so it can be exercised without sockets.
class ExplanationService {
 public:
  explicit ExplanationService(ServiceOptions options = {});
  ~ExplanationService();
  ExplanationService(const ExplanationService&) = delete;
  ExplanationService& operator=(const ExplanationService&) = delete;

  HttpResult handle(const std::string& method, const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& query = {});

  /// Creates a session from a POST /sessions body; returns its id.
  std::string create_session(const json& body);
  std::shared_ptr<const ServiceSession> session(const std::string& id) const;
  std::size_t session_count() const;

  /// Binds and serves on a background thread. Throws Error("bind_failed").
  void start();
  /// Actual bound port once started.
  int port() const noexcept { return bound_port_; }
  void stop();

 private:
  HttpResult route(const std::string& method, const std::string& path, const json& body,
                   const std::map<std::string, std::string>& query);
  std::string next_id();
  void save_snapshot(const ServiceSession& s) const;
  void load_snapshots();

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const ServiceSession>> sessions_;
  long counter_ = 0;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int bound_port_ = -1;
};

/// Maps an error code to an HTTP status.
int http_status_for(const std::string& code);

}  // namespace lmte
