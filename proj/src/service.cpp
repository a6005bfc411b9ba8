#include "lmte/service.hpp"

#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include <httplib.h>

namespace lmte {

int http_status_for(const std::string& code) {
  static const std::set<std::string> not_found{"unknown_session", "not_found", "missing_file"};
  static const std::set<std::string> conflict{"no_tree"};
  static const std::set<std::string> upstream{"oracle_unavailable", "oracle_handshake", "oracle_reply",
                                              "oracle_count_mismatch"};
  static const std::set<std::string> internal{"non_finite_loss", "io_error", "internal"};
  if (not_found.count(code)) return 404;
  if (conflict.count(code)) return 409;
  if (upstream.count(code)) return 502;
  if (code == "method_not_allowed") return 405;
  if (internal.count(code)) return 500;
  return 400;
}

namespace {

HttpResult error_result(const std::string& code, const std::string& message) {
  return {http_status_for(code), json{{"error", {{"code", code}, {"message", message}}}}};
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() ? base / path : path;
}

bool truthy(const std::map<std::string, std::string>& query, const std::string& key) {
  const auto it = query.find(key);
  return it != query.end() && (it->second == "true" || it->second == "1");
}

std::size_t top_k_of(const json& body) {
  const auto k = body.is_object() ? body.value("top_k", 5) : 5;
  if (k < 1) throw Error("invalid_argument", "top_k must be >= 1");
  return static_cast<std::size_t>(k);
}

}  // namespace

ExplanationService::ExplanationService(ServiceOptions options) : options_(std::move(options)) {
  if (options_.snapshot_dir) load_snapshots();
}

ExplanationService::~ExplanationService() { stop(); }

std::string ExplanationService::next_id() { return "s" + std::to_string(++counter_); }

std::shared_ptr<const ServiceSession> ExplanationService::session(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error("unknown_session", "no session '" + id + "'");
  return it->second;
}

std::size_t ExplanationService::session_count() const {
  std::shared_lock lock(mutex_);
  return sessions_.size();
}

namespace {

/// Builds everything but the fitted part of a session from its creation body.
std::shared_ptr<ServiceSession> prepare_session(const json& body, const std::filesystem::path& base) {
  if (!body.is_object()) throw Error("invalid_request", "session request must be a JSON object");
  if (!body.contains("train_csv_path")) throw Error("invalid_request", "session request needs \"train_csv_path\"");
  if (!body.contains("oracle_spec")) throw Error("invalid_request", "session request needs \"oracle_spec\"");
  auto s = std::make_shared<ServiceSession>();
  s->request = body;

  std::optional<Schema> schema;
  std::string label = body.value("label", std::string());
  if (body.contains("schema_path")) {
    const auto path = resolve(base, body["schema_path"].get<std::string>());
    std::ifstream in(path);
    if (!in) throw Error("missing_file", "cannot open schema file " + path.string());
    const json sidecar = json::parse(in, nullptr, false);
    if (sidecar.is_discarded()) throw Error("invalid_schema", "schema file is not valid JSON: " + path.string());
    schema = Schema::from_json(sidecar);
    if (label.empty()) label = sidecar.value("label", std::string());
  }
  Dataset data = load_csv(resolve(base, body["train_csv_path"].get<std::string>()), schema);
  s->train = label.empty() ? std::move(data) : split_label(data, label).features;

  json spec = body["oracle_spec"];
  if (spec.is_object() && !spec.contains("base_dir")) spec["base_dir"] = base.string();
  s->oracle = make_oracle(spec);
  s->config = SessionConfig::from_json(body.value("config", json::object()), s->oracle->task());
  s->space = FeatureSpace::fit(s->train);
  return s;
}

}  // namespace

std::string ExplanationService::create_session(const json& body) {
  auto s = prepare_session(body, options_.base_dir);
  if (body.contains("point") && !body["point"].is_null()) {
    const Row x = row_from_json(s->train.schema(), body["point"]);
    s->fitted = fit_session(s->train, x, *s->oracle, s->config);
  }
  {
    std::unique_lock lock(mutex_);
    s->id = next_id();
    sessions_[s->id] = s;
  }
  save_snapshot(*s);
  return s->id;
}

void ExplanationService::save_snapshot(const ServiceSession& s) const {
  if (!options_.snapshot_dir) return;
  std::filesystem::create_directories(*options_.snapshot_dir);
  json doc{{"id", s.id}, {"request", s.request}, {"fitted", s.fitted ? s.fitted->to_json() : json(nullptr)}};
  const auto path = *options_.snapshot_dir / (s.id + ".json");
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write snapshot " + path.string());
  out << doc.dump() << "\n";
}

void ExplanationService::load_snapshots() {
  const auto& dir = *options_.snapshot_dir;
  if (!std::filesystem::exists(dir)) return;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      std::ifstream in(f);
      const json doc = json::parse(in);
      auto s = prepare_session(doc.at("request"), options_.base_dir);
      s->id = doc.at("id").get<std::string>();
      if (!doc["fitted"].is_null()) s->fitted = FittedSession::from_json(doc["fitted"]);
      if (s->id.size() > 1 && s->id[0] == 's') counter_ = std::max(counter_, std::stol(s->id.substr(1)));
      sessions_[s->id] = s;
    } catch (const std::exception& e) {
      std::cerr << json{{"warning", {{"code", "snapshot_skipped"}, {"message", f.string() + ": " + e.what()}}}}.dump()
                << "\n";
    }
  }
}

HttpResult ExplanationService::handle(const std::string& method, const std::string& path, const std::string& body,
                                      const std::map<std::string, std::string>& query) {
  try {
    json doc = json::object();
    if (!body.empty()) {
      doc = json::parse(body, nullptr, false);
      if (doc.is_discarded()) return error_result("invalid_json", "request body is not valid JSON");
    }
    return route(method, path, doc, query);
  } catch (const Error& e) {
    return error_result(e.code(), e.what());
  } catch (const json::exception& e) {
    return error_result("invalid_request", e.what());
  } catch (const std::exception& e) {
    return error_result("internal", e.what());
  }
}

HttpResult ExplanationService::route(const std::string& method, const std::string& path, const json& body,
                                     const std::map<std::string, std::string>& query) {
  const auto parts = split_path(path);
  if (parts.size() == 1 && parts[0] == "health") {
    if (method != "GET") return error_result("method_not_allowed", "use GET /health");
    return {200, json{{"status", "ok"}}};
  }
  if (parts.empty() || parts[0] != "sessions") return error_result("not_found", "no route for " + path);

  if (parts.size() == 1) {
    if (method == "POST") {
      const auto id = create_session(body);
      const auto s = session(id);
      json out{{"session_id", id}};
      if (s->fitted) out["explanation"] = s->fitted->explanation.to_json(s->train.schema(), top_k_of(body));
      return {201, out};
    }
    if (method == "GET") {
      std::shared_lock lock(mutex_);
      json ids = json::array();
      for (const auto& [id, _] : sessions_) ids.push_back(id);
      return {200, json{{"sessions", ids}}};
    }
    return error_result("method_not_allowed", "use GET or POST /sessions");
  }

  const auto s = session(parts[1]);
  const Schema& schema = s->train.schema();
  if (parts.size() == 2) {
    if (method != "DELETE") return error_result("method_not_allowed", "use DELETE /sessions/{id}");
    std::unique_lock lock(mutex_);
    sessions_.erase(parts[1]);
    if (options_.snapshot_dir) std::filesystem::remove(*options_.snapshot_dir / (parts[1] + ".json"));
    return {200, json{{"deleted", parts[1]}}};
  }
  if (parts.size() != 3) return error_result("not_found", "no route for " + path);
  const auto& action = parts[2];

  if (action == "schema") {
    if (method != "GET") return error_result("method_not_allowed", "use GET");
    return {200, schema.to_json()};
  }
  if (action == "tree") {
    if (method != "GET") return error_result("method_not_allowed", "use GET");
    if (!s->fitted) return error_result("no_tree", "session was created without a test point");
    return {200, s->fitted->tree.to_json()};
  }
  if (action == "explain") {
    if (method != "POST") return error_result("method_not_allowed", "use POST");
    const std::size_t k = top_k_of(body);
    const bool has_point = body.contains("point") && !body["point"].is_null();
    if (!has_point && !s->fitted) throw Error("invalid_request", "explain needs a \"point\"");
    const Row x = has_point ? row_from_json(schema, body["point"]) : s->fitted->point;
    if (truthy(query, "fresh") || !s->fitted) {
      const auto fresh = fit_session(s->train, x, *s->oracle, s->config);
      return {200, fresh.explanation.to_json(schema, k)};
    }
    if (x == s->fitted->point) return {200, s->fitted->explanation.to_json(schema, k)};
    Explanation e = explain_with_tree(s->fitted->tree, x, s->config.probability_labels);
    Eigen::MatrixXd one(1, x.size());
    one.row(0) = x.transpose();
    e.oracle_prediction = s->oracle->predict(Dataset(schema, one)).preds(0);
    e.fidelity = s->fitted->explanation.fidelity;
    return {200, e.to_json(schema, k)};
  }
  if (action == "whatif") {
    if (method != "POST") return error_result("method_not_allowed", "use POST");
    if (!s->fitted) return error_result("no_tree", "session was created without a test point");
    const std::size_t k = top_k_of(body);
    const Row x = body.contains("point") && !body["point"].is_null() ? row_from_json(schema, body["point"])
                                                                     : s->fitted->point;
    Explanation e = what_if(s->fitted->tree, x, body.value("overrides", json::object()), s->config.probability_labels);
    e.fidelity = s->fitted->explanation.fidelity;
    json out = e.to_json(schema, k);
    out["base_leaf_id"] = s->fitted->tree.leaf_for(s->fitted->tree.space.encode_row(x));
    return {200, out};
  }
  return error_result("not_found", "no route for " + path);
}

// ---------------------------------------------------------------------------
// HTTP wiring

void ExplanationService::start() {
  if (server_) throw Error("already_running", "service is already running");
  server_ = std::make_unique<httplib::Server>();
  const int threads = std::max(1, options_.threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  if (options_.static_dir && !server_->set_mount_point("/ui", options_.static_dir->string()))
    throw Error("missing_file", "static directory not found: " + options_.static_dir->string());

  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const auto result = handle(req.method, req.path, req.body, query);
    res.status = result.status;
    res.set_content(result.body.dump(), "application/json");
  };
  server_->Get(R"(/(health|sessions.*))", handler);
  server_->Post(R"(/sessions.*)", handler);
  server_->Delete(R"(/sessions.*)", handler);
  server_->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  if (options_.port == 0) {
    bound_port_ = server_->bind_to_any_port(options_.host);
  } else {
    bound_port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (bound_port_ < 0) {
    server_.reset();
    throw Error("bind_failed", "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void ExplanationService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

}  // namespace lmte
