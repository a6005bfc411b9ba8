#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <thread>

#include "lmte/evalkit.hpp"
#include "util.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw Error("invalid_config", "experiment config must be a JSON object");
  ExperimentConfig c;
  if (!doc.contains("experiment")) throw Error("invalid_config", "experiment config needs \"experiment\"");
  c.experiment = doc["experiment"].get<std::string>();
  c.dataset = doc.value("dataset", c.experiment == "artificial" ? std::string("two_moons") : std::string());
  if (c.dataset.empty()) throw Error("invalid_config", "experiment config needs \"dataset\"");
  c.data_dir = doc.value("data_dir", std::string("data"));
  c.test_points = doc.value("test_points", c.test_points);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.urs_samples = doc.value("urs_samples", c.urs_samples);
  c.test_fraction = doc.value("test_fraction", c.test_fraction);
  c.target_depth = doc.value("target_depth", c.target_depth);
  c.jobs = doc.value("jobs", c.jobs);
  c.linear_kernel = doc.value("linear_kernel", c.linear_kernel);
  c.kernel_width = doc.value("kernel_width", c.kernel_width);
  c.seed = doc.value("seed", c.seed);
  if (doc.contains("forest")) {
    const auto& f = doc["forest"];
    c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
    c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
    c.forest.max_features = f.value("max_features", c.forest.max_features);
    c.forest.bootstrap = f.value("bootstrap", c.forest.bootstrap);
    c.forest.seed = f.value("seed", c.forest.seed);
  }
  // The session block is resolved against the dataset's task in run_experiment.
  if (doc.contains("session")) c.session_doc = doc["session"];
  if (c.test_points < 0) throw Error("invalid_config", "test_points must be >= 0");
  if (c.batch_size < 1) throw Error("invalid_config", "batch_size must be >= 1");
  if (c.linear_kernel != "none" && c.linear_kernel != "exponential")
    throw Error("invalid_config", "linear_kernel must be \"none\" or \"exponential\"");
  if (c.jobs < 1) throw Error("invalid_config", "jobs must be >= 1");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw Error("invalid_config", "test_fraction must be in (0, 1)");
  return c;
}

json ExperimentConfig::to_json() const {
  return json{{"experiment", experiment},
              {"dataset", dataset},
              {"data_dir", data_dir.string()},
              {"test_points", test_points},
              {"batch_size", batch_size},
              {"urs_samples", urs_samples},
              {"test_fraction", test_fraction},
              {"target_depth", target_depth},
              {"linear_kernel", linear_kernel},
              {"kernel_width", kernel_width},
              {"forest",
               {{"n_trees", forest.n_trees},
                {"max_depth", forest.max_depth},
                {"max_features", forest.max_features},
                {"bootstrap", forest.bootstrap},
                {"seed", forest.seed}}},
              {"session", session_doc},
              {"jobs", jobs},
              {"seed", seed}};
}

// ---------------------------------------------------------------------------
// Report

json MetricReport::to_json() const {
  return json{{"experiment", experiment}, {"dataset", dataset},   {"task", to_string(task)},
              {"aggregation", aggregation}, {"records", records}, {"aggregates", aggregates}};
}

namespace {

std::string cell(const json& v) {
  if (v.is_null()) return "-";
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "experiment: " << experiment << "  dataset: " << dataset << "  task: " << to_string(task)
      << "  aggregation: " << aggregation << "\n";
  std::vector<std::string> keys;
  for (const auto& r : records)
    for (const auto& [k, v] : r.items())
      if (!v.is_array() && !v.is_object() && std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::vector<std::size_t> widths;
  for (const auto& k : keys) {
    std::size_t w = k.size();
    for (const auto& r : records) w = std::max(w, cell(r.value(k, json(nullptr))).size());
    widths.push_back(w);
  }
  for (std::size_t i = 0; i < keys.size(); ++i) out << (i ? "  " : "") << std::string(widths[i] - keys[i].size(), ' ') << keys[i];
  out << "\n";
  for (const auto& r : records) {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto s = cell(r.value(keys[i], json(nullptr)));
      out << (i ? "  " : "") << std::string(widths[i] - s.size(), ' ') << s;
    }
    out << "\n";
  }
  out << "aggregates:\n";
  for (const auto& [k, v] : aggregates.items()) out << "  " << k << ": " << (v.is_array() ? v.dump() : cell(v)) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Shared setup

namespace {

struct Setup {
  BundledDataset ds;
  Dataset train;
  Eigen::VectorXd train_labels;
  Dataset test;
  FeatureSpace space;
  SessionConfig session;
  std::vector<Eigen::Index> points;  // rows of `test`
};

Setup prepare(const ExperimentConfig& cfg) {
  Setup s;
  s.ds = load_bundled_dataset(cfg.dataset, cfg.data_dir);
  const auto labeled = split_label(s.ds.data, s.ds.label);
  const Eigen::Index n = labeled.features.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 100));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(n)));
  const std::span<const Eigen::Index> all(order);
  std::vector<Eigen::Index> test_idx(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Eigen::Index> train_idx(all.begin() + static_cast<std::ptrdiff_t>(n_test), all.end());
  std::sort(train_idx.begin(), train_idx.end());
  s.train = labeled.features.select(train_idx);
  s.train_labels.resize(static_cast<Eigen::Index>(train_idx.size()));
  for (std::size_t i = 0; i < train_idx.size(); ++i) s.train_labels(static_cast<Eigen::Index>(i)) = labeled.labels(train_idx[i]);
  s.test = labeled.features.select(test_idx);
  s.space = FeatureSpace::fit(s.train);
  s.session = SessionConfig::from_json(cfg.session_doc.is_object() ? cfg.session_doc : json::object(), s.ds.task);
  s.session.seed = cfg.seed;
  const auto count = std::min<Eigen::Index>(cfg.test_points, s.test.rows());
  for (Eigen::Index i = 0; i < count; ++i) s.points.push_back(i);
  return s;
}

std::shared_ptr<Oracle> forest_target(const ExperimentConfig& cfg, const Setup& s) {
  ForestConfig fc = cfg.forest;
  fc.task = s.ds.task;
  auto forest = std::make_shared<const ReferenceForest>(fit_reference_forest(plain_matrix(s.train), s.train_labels, fc));
  return forest_oracle(forest, s.train.schema());
}

/// Runs fn(i) for every point index; results land in their own slot.
void for_each_point(std::size_t count, int jobs, const std::function<json(std::size_t)>& fn, std::vector<json>& out) {
  out.assign(count, json());
  std::vector<std::exception_ptr> errors(count);
  auto worker = [&](std::size_t start) {
    for (std::size_t i = start; i < count; i += static_cast<std::size_t>(jobs)) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker, static_cast<std::size_t>(j));
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double score(Task task, const Eigen::VectorXd& surrogate, const Eigen::VectorXd& oracle) {
  if (task == Task::classification) {
    const Eigen::VectorXd cls = (surrogate.array() >= 0.5).cast<double>();
    return fidelity_classification(cls, oracle);
  }
  return fidelity_regression(surrogate, oracle);
}

double aggregate(Task task, const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  if (task == Task::regression) return median(v);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> column(const std::vector<json>& records, const std::string& key) {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.contains(key) && r[key].is_number()) out.push_back(r[key].get<double>());
  return out;
}

LmtConfig linear_config(const LmtConfig& lmt) {
  LmtConfig c = lmt;
  c.max_depth = 0;
  return c;
}

struct Labeled {
  Dataset rows;
  Eigen::VectorXd labels;
};

Labeled first_rows(const Dataset& rows, const Eigen::VectorXd& labels, Eigen::Index from, Eigen::Index count) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), from);
  return {rows.select(idx), labels.segment(from, count)};
}

double fit_and_score(const Labeled& train, const Labeled& test, const LmtConfig& cfg, const FeatureSpace& space, Task task) {
  const auto tree = fit_lmt(space.encode(train.rows), train.labels, cfg, space);
  return score(task, predict_rows(tree, space.encode(test.rows)), test.labels);
}

/// Depth-0 baseline, optionally weighted by proximity to x.
LinearModelTree fit_linear(const Labeled& train, const Row& x, const ExperimentConfig& cfg, const Setup& s) {
  const LmtConfig lin = linear_config(s.session.lmt);
  const Eigen::MatrixXd X = s.space.encode(train.rows);
  if (cfg.linear_kernel == "none") return fit_lmt(X, train.labels, lin, s.space);
  const Eigen::VectorXd w = exponential_kernel_weights(X, s.space.encode_row(x), cfg.kernel_width);
  LinearModelTree tree;
  tree.space = s.space;
  tree.config = lin;
  TreeNode root;
  root.n_rows = static_cast<int>(X.rows());
  root.model = lin.task == Task::regression
                   ? fit_ridge(X, train.labels, lin.resolved_regularization(), &w)
                   : fit_logistic(X, train.labels, lin.resolved_regularization(), {}, nullptr, &w);
  tree.nodes.push_back(std::move(root));
  return tree;
}

// ---------------------------------------------------------------------------
// Protocols

MetricReport surrogate_power(const ExperimentConfig& cfg, Setup& s) {
  auto oracle = forest_target(cfg, s);
  const TrainStats stats = TrainStats::from(s.train);
  const Task task = s.ds.task;
  MetricReport rep;
  for_each_point(s.points.size(), cfg.jobs, [&](std::size_t i) {
    const Row x = s.test.row(s.points[i]);
    const auto seed = detail::mix_seed(cfg.seed, 1000 + i);
    const Dataset rows = urs_sample(stats, x, cfg.urs_samples, seed);
    const Labeled nb{rows, oracle->predict(rows).preds};
    // Both surrogates are fitted and scored on the same neighborhood.
    const double lmt = fit_and_score(nb, nb, s.session.lmt, s.space, task);
    const auto lin_tree = fit_linear(nb, x, cfg, s);
    const double lin = score(task, predict_rows(lin_tree, s.space.encode(nb.rows)), nb.labels);
    return json{{"point", static_cast<int>(i)}, {"lmt", lmt}, {"linear", lin}};
  }, rep.records);
  const auto lmt = column(rep.records, "lmt");
  const auto lin = column(rep.records, "linear");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < lmt.size(); ++i) wins += task == Task::classification ? lmt[i] >= lin[i] : lmt[i] <= lin[i];
  rep.aggregates = {{"lmt", aggregate(task, lmt)},
                    {"linear", aggregate(task, lin)},
                    {"lmt_wins_fraction", static_cast<double>(wins) / static_cast<double>(lmt.size())}};
  return rep;
}

MetricReport cross_generalization(const ExperimentConfig& cfg, Setup& s) {
  auto oracle = forest_target(cfg, s);
  const TrainStats stats = TrainStats::from(s.train);
  const Task task = s.ds.task;
  MetricReport rep;
  for_each_point(s.points.size(), cfg.jobs, [&](std::size_t i) {
    const Row x = s.test.row(s.points[i]);
    SessionConfig sc = s.session;
    sc.seed = detail::mix_seed(cfg.seed, 1000 + i);
    sc.n_synthetic = 2 * s.session.n_synthetic;
    const auto nb = generate_neighborhood(s.train, x, *oracle, sc);
    const auto n_gan = static_cast<Eigen::Index>(s.session.n_synthetic);
    const auto gan_train = first_rows(nb.rows, nb.labels, 0, n_gan);
    const auto gan_test = first_rows(nb.rows, nb.labels, n_gan, n_gan);

    const Dataset urs = urs_sample(stats, x, 2 * cfg.urs_samples, detail::mix_seed(sc.seed, 7));
    const Eigen::VectorXd urs_labels = oracle->predict(urs).preds;
    const auto n_urs = static_cast<Eigen::Index>(cfg.urs_samples);
    const auto urs_train = first_rows(urs, urs_labels, 0, n_urs);
    const auto urs_test = first_rows(urs, urs_labels, n_urs, n_urs);

    const auto lmt = fit_lmt(s.space.encode(gan_train.rows), gan_train.labels, s.session.lmt, s.space);
    const auto lin = fit_linear(urs_train, x, cfg, s);
    auto eval = [&](const LinearModelTree& t, const Labeled& d) {
      return score(task, predict_rows(t, s.space.encode(d.rows)), d.labels);
    };
    return json{{"point", static_cast<int>(i)},
                {"lmt_own", eval(lmt, gan_test)},
                {"lmt_cross", eval(lmt, urs_test)},
                {"linear_own", eval(lin, urs_test)},
                {"linear_cross", eval(lin, gan_test)}};
  }, rep.records);
  const double lmt_own = aggregate(task, column(rep.records, "lmt_own"));
  const double lmt_cross = aggregate(task, column(rep.records, "lmt_cross"));
  const double lin_own = aggregate(task, column(rep.records, "linear_own"));
  const double lin_cross = aggregate(task, column(rep.records, "linear_cross"));
  // A drop is the loss of quality when moving to the other sampler's data.
  const double sign = task == Task::classification ? 1.0 : -1.0;
  const double lmt_drop = sign * (lmt_own - lmt_cross);
  const double lin_drop = sign * (lin_own - lin_cross);
  rep.aggregates = {{"lmt_own", lmt_own},       {"lmt_cross", lmt_cross}, {"linear_own", lin_own},
                    {"linear_cross", lin_cross}, {"lmt_drop", lmt_drop},   {"linear_drop", lin_drop},
                    {"lmt_drop_exceeds_linear", lmt_drop > lin_drop}};
  return rep;
}

MetricReport end_to_end(const ExperimentConfig& cfg, Setup& s) {
  auto oracle = forest_target(cfg, s);
  MetricReport rep;
  for_each_point(s.points.size(), cfg.jobs, [&](std::size_t i) {
    SessionConfig sc = s.session;
    sc.seed = detail::mix_seed(cfg.seed, 1000 + i);
    const auto fitted = fit_session(s.train, s.test.row(s.points[i]), *oracle, sc);
    const auto& e = fitted.explanation;
    return json{{"point", static_cast<int>(i)},
                {"fidelity", e.fidelity ? json(*e.fidelity) : json(nullptr)},
                {"leaves", fitted.tree.leaf_count()},
                {"agrees_at_point", e.oracle_prediction ? json(e.surrogate_prediction == *e.oracle_prediction) : json(nullptr)}};
  }, rep.records);
  rep.aggregates = {{"fidelity", aggregate(s.ds.task, column(rep.records, "fidelity"))}};
  return rep;
}

MetricReport coverage_precision_experiment(const ExperimentConfig& cfg, Setup& s) {
  if (s.ds.task != Task::classification)
    throw Error("invalid_config", "coverage_precision needs a classification dataset");
  auto oracle = forest_target(cfg, s);
  const Eigen::VectorXd eval_labels = oracle->predict(s.train).preds;
  MetricReport rep;
  for_each_point(s.points.size(), cfg.jobs, [&](std::size_t i) {
    SessionConfig sc = s.session;
    sc.seed = detail::mix_seed(cfg.seed, 1000 + i);
    const auto fitted = fit_session(s.train, s.test.row(s.points[i]), *oracle, sc);
    const auto cp = coverage_precision(fitted.explanation.context, fitted.tree.leaf_model(fitted.explanation.leaf_id),
                                       fitted.space, s.train, eval_labels);
    return json{{"point", static_cast<int>(i)},
                {"coverage", cp.coverage},
                {"precision", cp.precision ? json(*cp.precision) : json(nullptr)},
                {"rule", fitted.explanation.context.to_string()}};
  }, rep.records);
  std::vector<double> cov_medians, prec_medians;
  for (std::size_t start = 0; start < rep.records.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const auto end = std::min(rep.records.size(), start + static_cast<std::size_t>(cfg.batch_size));
    const std::vector<json> batch(rep.records.begin() + static_cast<std::ptrdiff_t>(start),
                                  rep.records.begin() + static_cast<std::ptrdiff_t>(end));
    cov_medians.push_back(median(column(batch, "coverage")));
    const auto prec = column(batch, "precision");
    if (!prec.empty()) prec_medians.push_back(median(prec));
  }
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return v.empty() ? std::nan("") : t / static_cast<double>(v.size());
  };
  rep.aggregates = {{"coverage_batch_medians", cov_medians},
                    {"precision_batch_medians", prec_medians},
                    {"coverage", mean(cov_medians)},
                    {"precision", prec_medians.empty() ? json(nullptr) : json(mean(prec_medians))}};
  return rep;
}

MetricReport recall_experiment(const ExperimentConfig& cfg, Setup& s) {
  if (s.ds.task != Task::classification) throw Error("invalid_config", "recall needs a classification dataset");
  CartConfig cc;
  cc.task = Task::classification;
  cc.max_depth = cfg.target_depth;
  auto tree = std::make_shared<const DecisionTree>(fit_cart(plain_matrix(s.train), s.train_labels, cc));
  auto oracle = tree_oracle(tree, s.train.schema());
  const auto owners = plain_column_owners(s.train.schema());
  MetricReport rep;
  for_each_point(s.points.size(), cfg.jobs, [&](std::size_t i) {
    const Row x = s.test.row(s.points[i]);
    std::set<std::string> truth;
    for (int f : tree->path_features(plain_row(s.train.schema(), x)))
      truth.insert(s.train.schema()[owners[static_cast<std::size_t>(f)]].name);
    SessionConfig sc = s.session;
    sc.seed = detail::mix_seed(cfg.seed, 1000 + i);
    const auto fitted = fit_session(s.train, x, *oracle, sc);
    const auto ranked = ranked_attributions(fitted.explanation);
    json top = json::array();
    for (std::size_t k = 0; k < (ranked.size() + 1) / 2; ++k) top.push_back(ranked[k].feature);
    return json{{"point", static_cast<int>(i)},
                {"recall", recall_faithfulness(ranked, truth)},
                {"true_features", truth},
                {"top_features", top}};
  }, rep.records);
  rep.aggregates = {{"recall", aggregate(Task::classification, column(rep.records, "recall"))}};
  return rep;
}

MetricReport artificial(const ExperimentConfig& cfg, Setup& s) {
  ForestConfig fc = cfg.forest;
  fc.task = s.ds.task;
  auto forest = std::make_shared<const ReferenceForest>(fit_reference_forest(plain_matrix(s.train), s.train_labels, fc));
  auto oracle = forest_oracle(forest, s.train.schema());
  const Eigen::MatrixXd plain = plain_matrix(s.train);
  Eigen::Index boundary = 0;
  double best = 2.0;
  for (Eigen::Index r = 0; r < plain.rows(); ++r) {
    const double gap = std::abs(forest->score(plain.row(r).transpose()) - 0.5);
    if (gap < best) {
      best = gap;
      boundary = r;
    }
  }
  const auto start = std::chrono::steady_clock::now();
  SessionConfig sc = s.session;
  sc.seed = detail::mix_seed(cfg.seed, 1000);
  const Row x = s.train.row(boundary);
  const auto fitted = fit_session(s.train, x, *oracle, sc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MetricReport rep;
  rep.records.push_back({{"point", row_to_json(s.train.schema(), x)},
                         {"forest_score", forest->score(plain.row(boundary).transpose())},
                         {"fidelity", fitted.explanation.fidelity ? json(*fitted.explanation.fidelity) : json(nullptr)},
                         {"leaves", fitted.tree.leaf_count()},
                         {"rule", fitted.explanation.context.to_string()},
                         {"seconds", secs}});
  rep.aggregates = {{"fidelity", rep.records[0]["fidelity"]}};
  return rep;
}

}  // namespace

MetricReport run_experiment(const ExperimentConfig& cfg) {
  using Runner = MetricReport (*)(const ExperimentConfig&, Setup&);
  static const std::vector<std::pair<std::string, Runner>> runners{
      {"surrogate_power", surrogate_power},   {"cross_generalization", cross_generalization},
      {"end_to_end", end_to_end},             {"coverage_precision", coverage_precision_experiment},
      {"recall", recall_experiment},          {"artificial", artificial}};
  const auto it = std::find_if(runners.begin(), runners.end(), [&](const auto& r) { return r.first == cfg.experiment; });
  if (it == runners.end()) throw Error("unknown_experiment", "no experiment named '" + cfg.experiment + "'");
  if (cfg.test_points == 0 && cfg.experiment != "artificial")
    throw Error("empty_report", "experiment has 0 test points; nothing to report");
  Setup s = prepare(cfg);
  if (s.points.empty() && cfg.experiment != "artificial")
    throw Error("empty_report", "dataset has no test rows for the experiment");
  MetricReport rep = it->second(cfg, s);
  rep.experiment = cfg.experiment;
  rep.dataset = cfg.dataset;
  rep.task = s.ds.task;
  rep.aggregation = s.ds.task == Task::classification ? "mean" : "median";
  return rep;
}

MetricReport run_experiment(const json& config) { return run_experiment(ExperimentConfig::from_json(config)); }

}  // namespace lmte
