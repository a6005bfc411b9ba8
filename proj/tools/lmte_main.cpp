#include <signal.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lmte/evalkit.hpp"
#include "lmte/explain.hpp"
#include "lmte/service.hpp"

namespace fs = std::filesystem;
using lmte::Error;
using lmte::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_path;
  std::string format = "json";
  int jobs = 1;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error("invalid_json", path.string() + " is not valid JSON");
  return doc;
}

/// Inline JSON text, or @file / a path to a JSON file.
json json_argument(const std::string& arg) {
  if (!arg.empty() && arg[0] == '@') return read_json_file(arg.substr(1));
  json doc = json::parse(arg, nullptr, false);
  if (!doc.is_discarded()) return doc;
  return read_json_file(arg);
}

void emit(const Globals& g, const std::string& text) {
  if (g.out_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream out(g.out_path);
  if (!out) throw Error("io_error", "cannot write " + g.out_path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

// ---------------------------------------------------------------------------
// Training data and oracle resolution shared by explain / sample

struct DataArgs {
  std::string train;
  std::string schema;
  std::string label;
  std::string oracle;  // spec file or inline JSON
  bool forest = false;
  int forest_trees = 100;
  std::string task;
};

struct Loaded {
  lmte::Dataset train;
  std::shared_ptr<lmte::Oracle> oracle;
  lmte::SessionConfig session;
};

Loaded load_inputs(const DataArgs& a, const json& config, const Globals& g) {
  std::string train = a.train.empty() ? config.value("train_csv", std::string()) : a.train;
  std::string schema_path = a.schema.empty() ? config.value("schema", std::string()) : a.schema;
  std::string label = a.label.empty() ? config.value("label", std::string()) : a.label;
  if (train.empty()) throw CLI::RequiredError("--train");

  std::optional<lmte::Schema> schema;
  std::string task = a.task;
  if (!schema_path.empty()) {
    const json sidecar = read_json_file(schema_path);
    schema = lmte::Schema::from_json(sidecar);
    if (label.empty()) label = sidecar.value("label", std::string());
    if (task.empty()) task = sidecar.value("task", std::string());
  }
  const lmte::Dataset data = lmte::load_csv(train, schema);
  Loaded out;
  out.train = label.empty() ? data : lmte::split_label(data, label).features;

  json spec;
  if (a.forest) {
    if (label.empty()) throw Error("invalid_argument", "--forest needs a label column (--label or schema sidecar)");
    if (task.empty()) task = "classification";
    spec = {{"kind", "in-process"}, {"task", task}, {"model", "reference-forest"}, {"train_csv", train},
            {"label", label},       {"n_trees", a.forest_trees}, {"seed", g.seed.value_or(0)}};
    if (!schema_path.empty()) spec["schema"] = schema_path;
  } else if (!a.oracle.empty()) {
    spec = json_argument(a.oracle);
  } else if (config.contains("oracle")) {
    spec = config["oracle"];
  } else {
    throw Error("invalid_argument", "no oracle given (use --oracle SPEC, --forest, or an \"oracle\" config section)");
  }
  out.oracle = lmte::make_oracle(spec);
  out.session = lmte::SessionConfig::from_json(config.value("session", json::object()), out.oracle->task());
  if (g.seed) out.session.seed = *g.seed;
  return out;
}

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--train", a.train, "Training CSV");
  cmd->add_option("--schema", a.schema, "Schema sidecar JSON");
  cmd->add_option("--label", a.label, "Label column to drop from the training data");
  cmd->add_option("--oracle", a.oracle, "Oracle spec: JSON file, @file or inline JSON");
  cmd->add_flag("--forest", a.forest, "Use a reference forest trained on the labeled training CSV");
  cmd->add_option("--forest-trees", a.forest_trees, "Trees in the --forest oracle")->check(CLI::PositiveNumber);
  cmd->add_option("--task", a.task, "Task for --forest")->check(CLI::IsMember({"classification", "regression"}));
}

lmte::Row load_point(const std::string& arg, const lmte::Schema& schema) {
  return lmte::row_from_json(schema, json_argument(arg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local explanations with linear model trees fitted on generated neighborhoods"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out_path, "Write output to this file instead of stdout");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "text"}));
  app.add_option("--jobs", g.jobs, "Worker threads for evaluation runs")->check(CLI::PositiveNumber);

  DataArgs explain_data;
  std::string explain_point_arg, save_session;
  std::size_t top_k = 5;
  auto* explain = app.add_subcommand("explain", "Explain one test point");
  add_data_options(explain, explain_data);
  explain->add_option("--point", explain_point_arg, "Test point: JSON file, @file or inline JSON")->required();
  explain->add_option("--save-session", save_session, "Write the fitted session for later what-if queries");
  explain->add_option("--top-k", top_k, "Attributions to show")->check(CLI::PositiveNumber);

  std::string session_path, overrides_arg, whatif_point;
  auto* whatif = app.add_subcommand("whatif", "Re-route a modified point through a saved session");
  whatif->add_option("--session", session_path, "Session file written by explain --save-session")
      ->required()
      ->check(CLI::ExistingFile);
  whatif->add_option("--overrides", overrides_arg, "Overrides object: inline JSON or file")->required();
  whatif->add_option("--point", whatif_point, "Base point (defaults to the session's point)");
  whatif->add_option("--top-k", top_k, "Attributions to show")->check(CLI::PositiveNumber);

  DataArgs sample_data;
  std::string sample_point;
  auto* sample_cmd = app.add_subcommand("sample", "Generate and label a neighborhood");
  add_data_options(sample_cmd, sample_data);
  sample_cmd->add_option("--point", sample_point, "Test point: JSON file, @file or inline JSON")->required();

  auto* eval = app.add_subcommand("eval", "Run an evaluation experiment (--config names it)");

  std::string host;
  int port = -1;
  std::string snapshot_dir, static_dir, base_dir;
  auto* serve = app.add_subcommand("serve", "Start the JSON-over-HTTP session service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--snapshot-dir", snapshot_dir, "Persist sessions as JSON snapshots here");
  serve->add_option("--static-dir", static_dir, "Serve static UI assets under /ui");
  serve->add_option("--base-dir", base_dir, "Directory relative request paths resolve against");

  std::string data_dir = "data";
  bool bundled = true;
  auto* fetch = app.add_subcommand("fetch-data", "Write the bundled datasets as CSV plus schema sidecars");
  fetch->add_option("--dir", data_dir, "Output directory");
  fetch->add_flag("--bundled,!--no-bundled", bundled, "Write the generated bundled datasets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n" << e.what() << "\n";
    return 2;
  }

  try {
    json config = json::object();
    if (!g.config_path.empty()) config = read_json_file(g.config_path);

    if (*explain) {
      const Loaded in = load_inputs(explain_data, config, g);
      lmte::Row x;
      try {
        x = load_point(explain_point_arg, in.train.schema());
      } catch (const Error& e) {
        if (e.code() != "missing_file") throw;
        std::cerr << explain->help() << "\n" << e.what() << "\n";
        return 2;
      }
      const auto fitted = lmte::fit_session(in.train, x, *in.oracle, in.session);
      if (!save_session.empty()) {
        std::ofstream out(save_session);
        if (!out) throw Error("io_error", "cannot write " + save_session);
        out << fitted.to_json().dump() << "\n";
      }
      const auto& schema = in.train.schema();
      emit(g, g.format == "json" ? fitted.explanation.to_json(schema, top_k).dump(2)
                                 : fitted.explanation.to_text(schema, top_k));
      return 0;
    }

    if (*whatif) {
      const auto session = lmte::FittedSession::from_json(read_json_file(session_path));
      const lmte::Row base = whatif_point.empty() ? session.point : load_point(whatif_point, session.schema());
      const auto e = lmte::what_if(session.tree, base, json_argument(overrides_arg), session.config.probability_labels);
      emit(g, g.format == "json" ? e.to_json(session.schema(), top_k).dump(2) : e.to_text(session.schema(), top_k));
      return 0;
    }

    if (*sample_cmd) {
      const Loaded in = load_inputs(sample_data, config, g);
      lmte::Row x;
      try {
        x = load_point(sample_point, in.train.schema());
      } catch (const Error& e) {
        if (e.code() != "missing_file") throw;
        std::cerr << sample_cmd->help() << "\n" << e.what() << "\n";
        return 2;
      }
      const auto nb = lmte::generate_neighborhood(in.train, x, *in.oracle, in.session);
      if (g.format == "json") {
        emit(g, nb.to_json().dump(2));
      } else {
        auto cols = nb.rows.schema().columns();
        cols.push_back({"oracle_label", lmte::ColumnKind::numerical, {}});
        if (nb.probs) cols.push_back({"oracle_probability", lmte::ColumnKind::numerical, {}});
        Eigen::MatrixXd values(nb.rows.rows(), static_cast<Eigen::Index>(cols.size()));
        values.leftCols(nb.rows.cols()) = nb.rows.values();
        values.col(nb.rows.cols()) = nb.labels;
        if (nb.probs) values.col(nb.rows.cols() + 1) = *nb.probs;
        std::ostringstream csv;
        lmte::write_csv(csv, lmte::Dataset(lmte::Schema(cols), values));
        emit(g, csv.str());
      }
      return 0;
    }

    if (*eval) {
      if (g.config_path.empty()) throw CLI::RequiredError("--config");
      json doc = config.contains("experiment") && config["experiment"].is_object() ? config["experiment"] : config;
      if (g.seed) doc["seed"] = *g.seed;
      doc["jobs"] = g.jobs;
      if (!doc.contains("data_dir")) doc["data_dir"] = "data";
      const auto report = lmte::run_experiment(doc);
      emit(g, g.format == "json" ? report.to_json().dump(2) : report.to_text());
      return 0;
    }

    if (*serve) {
      lmte::ServiceOptions opts;
      const json sc = config.value("serve", json::object());
      opts.host = host.empty() ? sc.value("host", opts.host) : host;
      opts.port = port >= 0 ? port : sc.value("port", opts.port);
      if (!snapshot_dir.empty())
        opts.snapshot_dir = snapshot_dir;
      else if (sc.contains("snapshot_dir"))
        opts.snapshot_dir = sc["snapshot_dir"].get<std::string>();
      if (!static_dir.empty()) opts.static_dir = static_dir;
      opts.base_dir = base_dir.empty() ? sc.value("base_dir", std::string(".")) : base_dir;

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      lmte::ExplanationService service(opts);
      service.start();
      std::cout << json{{"listening", "http://" + opts.host + ":" + std::to_string(service.port())},
                        {"sessions", service.session_count()}}
                       .dump()
                << std::endl;
      int sig = 0;
      sigwait(&signals, &sig);
      service.stop();
      return 0;
    }

    if (*fetch) {
      json written = json::array();
      if (bundled)
        for (const auto& p : lmte::write_bundled_datasets(data_dir)) written.push_back(p.string());
      const json out{{"written", written}};
      emit(g, g.format == "json" ? out.dump(2) : [&] {
        std::string s;
        for (const auto& p : written) s += p.get<std::string>() + "\n";
        return s;
      }());
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n" << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    if (g.format == "json")
      std::cerr << json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << "\n";
    else
      std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    if (g.format == "json")
      std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
