#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lmte/lmt.hpp"
#include "lmte/tabular.hpp"

namespace lmte {

inline constexpr const char* kOracleProtocol = "lmte-oracle/1";

/// One prediction per row. Classification oracles return class indices in
/// `preds` and, when available, class-1 probabilities in `probs`.
struct Prediction {
  Eigen::VectorXd preds;
  std::optional<Eigen::VectorXd> probs;
};

/// The black-box model being explained.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual Task task() const = 0;
  virtual std::string kind() const = 0;

  /// Validated batch prediction: throws Error("oracle_count_mismatch") when
  /// the reply length differs from the row count and Error("oracle_reply")
  /// for out-of-range probabilities or non-finite values.
  Prediction predict(const Dataset& rows);

 protected:
  virtual Prediction predict_batch(const Dataset& rows) = 0;
};

using PredictFn = std::function<Prediction(const Dataset&)>;

class InProcessOracle final : public Oracle {
 public:
  InProcessOracle(Task task, PredictFn fn, std::string name = "in-process");

  Task task() const override { return task_; }
  std::string kind() const override { return "in-process"; }
  const std::string& name() const noexcept { return name_; }

 protected:
  Prediction predict_batch(const Dataset& rows) override;

 private:
  Task task_;
  PredictFn fn_;
  std::string name_;
};

/// Child process speaking NDJSON on stdin/stdout. The first line it writes
/// must be the handshake {"protocol": "lmte-oracle/1", "task": ...}.
class SubprocessOracle final : public Oracle {
 public:
  SubprocessOracle(std::vector<std::string> argv, Task expected_task,
                   std::chrono::milliseconds timeout = std::chrono::seconds(60));
  ~SubprocessOracle() override;
  SubprocessOracle(const SubprocessOracle&) = delete;
  SubprocessOracle& operator=(const SubprocessOracle&) = delete;

  Task task() const override { return task_; }
  std::string kind() const override { return "subprocess"; }

 protected:
  Prediction predict_batch(const Dataset& rows) override;

 private:
  std::string read_line();
  void write_line(const std::string& line);
  void shutdown();

  std::vector<std::string> argv_;
  Task task_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  long next_id_ = 1;
  std::mutex mutex_;
};

/// POSTs the request body to {url}/predict.
class HttpOracle final : public Oracle {
 public:
  HttpOracle(std::string url, Task task, std::chrono::milliseconds timeout = std::chrono::seconds(60));

  Task task() const override { return task_; }
  std::string kind() const override { return "http"; }

 protected:
  Prediction predict_batch(const Dataset& rows) override;

 private:
  std::string url_;
  Task task_;
  std::chrono::milliseconds timeout_;
  long next_id_ = 1;
  std::mutex mutex_;
};

/// Request body shared by the subprocess and HTTP kinds.
json oracle_request(long id, const Dataset& rows);
/// Parses and validates a reply body against the request id and row count.
Prediction parse_oracle_reply(const json& reply, long id, Eigen::Index rows, Task task);

/// Factory for named in-process models; receives the full oracle spec.
using OracleFactory = std::function<std::shared_ptr<Oracle>(const json& spec)>;
void register_oracle_model(const std::string& name, OracleFactory factory);
std::vector<std::string> registered_oracle_models();

/// Builds an oracle from a spec such as
///   {"kind": "subprocess", "task": "regression", "command": ["python3", "oracle.py"]}
///   {"kind": "http", "task": "classification", "url": "http://127.0.0.1:9000"}
///   {"kind": "in-process", "task": "classification", "model": "reference-forest", ...}
/// Relative paths inside the spec are resolved by the factories against
/// `spec["base_dir"]` when present.
std::shared_ptr<Oracle> make_oracle(const json& spec);

}  // namespace lmte
