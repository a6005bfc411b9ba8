#include "lmte/oracle.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>

#include <httplib.h>

#include "builtin_oracles.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Shared validation

Prediction Oracle::predict(const Dataset& rows) {
  if (rows.empty()) return {Eigen::VectorXd(0), std::nullopt};
  Prediction p = predict_batch(rows);
  if (p.preds.size() != rows.rows())
    throw Error("oracle_count_mismatch", "oracle returned " + std::to_string(p.preds.size()) +
                                             " predictions for " + std::to_string(rows.rows()) + " rows");
  if (!p.preds.allFinite()) throw Error("oracle_reply", "oracle returned a non-finite prediction");
  if (p.probs) {
    if (p.probs->size() != rows.rows())
      throw Error("oracle_count_mismatch", "oracle returned " + std::to_string(p.probs->size()) +
                                               " probabilities for " + std::to_string(rows.rows()) + " rows");
    for (double v : *p.probs)
      if (!(v >= 0.0 && v <= 1.0)) throw Error("oracle_reply", "oracle probability outside [0, 1]");
  }
  return p;
}

json oracle_request(long id, const Dataset& rows) {
  json body = json::array();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) body.push_back(row_to_cells(rows.schema(), rows.row(r)));
  return json{{"id", id}, {"rows", std::move(body)}};
}

Prediction parse_oracle_reply(const json& reply, long id, Eigen::Index rows, Task task) {
  if (!reply.is_object()) throw Error("oracle_reply", "oracle reply is not a JSON object");
  if (!reply.contains("id") || !reply["id"].is_number_integer() || reply["id"].get<long>() != id)
    throw Error("oracle_reply", "oracle reply id does not match request " + std::to_string(id));
  if (!reply.contains("preds") || !reply["preds"].is_array())
    throw Error("oracle_reply", "oracle reply lacks a \"preds\" array");
  auto to_vector = [](const json& arr, const char* field) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number()) throw Error("oracle_reply", std::string("non-numeric entry in \"") + field + "\"");
      v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    return v;
  };
  Prediction p;
  p.preds = to_vector(reply["preds"], "preds");
  if (reply.contains("probs") && !reply["probs"].is_null()) {
    if (!reply["probs"].is_array()) throw Error("oracle_reply", "\"probs\" must be an array");
    p.probs = to_vector(reply["probs"], "probs");
  }
  if (p.preds.size() != rows)
    throw Error("oracle_count_mismatch", "oracle returned " + std::to_string(p.preds.size()) +
                                             " predictions for " + std::to_string(rows) + " rows");
  if (task == Task::classification)
    for (double v : p.preds)
      if (v != std::round(v) || v < 0.0)
        throw Error("oracle_reply", "classification oracle returned a non-integer class");
  return p;
}

// ---------------------------------------------------------------------------
// In-process

InProcessOracle::InProcessOracle(Task task, PredictFn fn, std::string name)
    : task_(task), fn_(std::move(fn)), name_(std::move(name)) {
  if (!fn_) throw Error("invalid_oracle", "in-process oracle needs a prediction function");
}

Prediction InProcessOracle::predict_batch(const Dataset& rows) { return fn_(rows); }

// ---------------------------------------------------------------------------
// Subprocess

SubprocessOracle::SubprocessOracle(std::vector<std::string> argv, Task expected_task,
                                   std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), task_(expected_task), timeout_(timeout) {
  if (argv_.empty()) throw Error("invalid_oracle", "subprocess oracle needs a command");
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) throw Error("oracle_unavailable", std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error("oracle_unavailable", std::string("pipe: ") + std::strerror(errno));
  }
  std::vector<char*> args;
  for (auto& a : argv_) args.push_back(a.data());
  args.push_back(nullptr);
  pid_ = ::fork();
  if (pid_ < 0) throw Error("oracle_unavailable", std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  json hello;
  try {
    hello = json::parse(read_line());
  } catch (const json::exception& e) {
    shutdown();
    throw Error("oracle_handshake", std::string("handshake is not valid JSON: ") + e.what());
  } catch (const Error& e) {
    shutdown();
    throw Error("oracle_handshake", std::string("no handshake from oracle: ") + e.what());
  }
  if (!hello.is_object() || hello.value("protocol", std::string()) != kOracleProtocol) {
    shutdown();
    throw Error("oracle_handshake", "oracle handshake must declare protocol " + std::string(kOracleProtocol));
  }
  const auto task = hello.value("task", std::string());
  if (task != to_string(task_)) {
    shutdown();
    throw Error("oracle_handshake", "oracle declares task '" + task + "', expected '" + to_string(task_) + "'");
  }
}

SubprocessOracle::~SubprocessOracle() { shutdown(); }

void SubprocessOracle::shutdown() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // Give the child a moment to exit on EOF before killing it.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(10000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string SubprocessOracle::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      return line;
    }
    if (from_child_ < 0) throw Error("oracle_unavailable", "oracle process is not running");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw Error("oracle_unavailable", "timed out waiting for the oracle");
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error("oracle_unavailable", std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) throw Error("oracle_unavailable", "timed out waiting for the oracle");
    char chunk[65536];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("oracle_unavailable", std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) throw Error("oracle_unavailable", "oracle process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void SubprocessOracle::write_line(const std::string& line) {
  std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(to_child_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("oracle_unavailable", std::string("write to oracle failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

Prediction SubprocessOracle::predict_batch(const Dataset& rows) {
  std::lock_guard lock(mutex_);
  if (to_child_ < 0) throw Error("oracle_unavailable", "oracle process is not running");
  const long id = next_id_++;
  write_line(oracle_request(id, rows).dump());
  const std::string line = read_line();
  json reply;
  try {
    reply = json::parse(line);
  } catch (const json::exception&) {
    throw Error("oracle_reply", "malformed oracle reply: " + line.substr(0, 200));
  }
  return parse_oracle_reply(reply, id, rows.rows(), task_);
}

// ---------------------------------------------------------------------------
// HTTP

HttpOracle::HttpOracle(std::string url, Task task, std::chrono::milliseconds timeout)
    : url_(std::move(url)), task_(task), timeout_(timeout) {
  while (!url_.empty() && url_.back() == '/') url_.pop_back();
  if (url_.rfind("http://", 0) != 0)
    throw Error("invalid_oracle", "http oracle url must start with http://, got '" + url_ + "'");
}

Prediction HttpOracle::predict_batch(const Dataset& rows) {
  long id = 0;
  {
    std::lock_guard lock(mutex_);
    id = next_id_++;
  }
  httplib::Client client(url_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
  client.set_connection_timeout(static_cast<time_t>(std::max<long long>(1, secs)));
  client.set_read_timeout(static_cast<time_t>(std::max<long long>(1, secs)));
  const auto res = client.Post("/predict", oracle_request(id, rows).dump(), "application/json");
  if (!res) throw Error("oracle_unavailable", "http oracle at " + url_ + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error("oracle_reply", "http oracle returned status " + std::to_string(res->status) + ": " +
                                    res->body.substr(0, 200));
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception&) {
    throw Error("oracle_reply", "malformed oracle reply: " + res->body.substr(0, 200));
  }
  return parse_oracle_reply(reply, id, rows.rows(), task_);
}

// ---------------------------------------------------------------------------
// Registry

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, OracleFactory>& registry() {
  static std::map<std::string, OracleFactory> r;
  return r;
}

void ensure_builtins() {
  static std::once_flag once;
  std::call_once(once, [] { detail::register_builtin_oracles(); });
}

}  // namespace

void register_oracle_model(const std::string& name, OracleFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(factory);
}

std::vector<std::string> registered_oracle_models() {
  ensure_builtins();
  std::lock_guard lock(registry_mutex());
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

std::shared_ptr<Oracle> make_oracle(const json& spec) {
  ensure_builtins();
  if (!spec.is_object() || !spec.contains("kind") || !spec.contains("task"))
    throw Error("invalid_oracle", "oracle spec must name \"kind\" and \"task\"");
  const auto kind = spec["kind"].get<std::string>();
  const Task task = task_from_string(spec["task"].get<std::string>());
  const auto timeout = std::chrono::milliseconds(spec.value("timeout_ms", 60000));
  if (kind == "subprocess") {
    if (!spec.contains("command") || !spec["command"].is_array() || spec["command"].empty())
      throw Error("invalid_oracle", "subprocess oracle needs a non-empty \"command\" array");
    auto argv = spec["command"].get<std::vector<std::string>>();
    return std::make_shared<SubprocessOracle>(std::move(argv), task, timeout);
  }
  if (kind == "http") {
    if (!spec.contains("url")) throw Error("invalid_oracle", "http oracle needs a \"url\"");
    return std::make_shared<HttpOracle>(spec["url"].get<std::string>(), task, timeout);
  }
  if (kind == "in-process") {
    const auto model = spec.value("model", std::string());
    OracleFactory factory;
    {
      std::lock_guard lock(registry_mutex());
      const auto it = registry().find(model);
      if (it == registry().end()) throw Error("invalid_oracle", "no in-process model named '" + model + "'");
      factory = it->second;
    }
    auto oracle = factory(spec);
    if (oracle->task() != task)
      throw Error("invalid_oracle", "model '" + model + "' does not serve task " + to_string(task));
    return oracle;
  }
  throw Error("invalid_oracle", "unknown oracle kind '" + kind + "'");
}

}  // namespace lmte
