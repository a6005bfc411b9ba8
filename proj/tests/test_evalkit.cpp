#include <filesystem>
#include <numeric>

#include "test_util.hpp"

#include "lmte/evalkit.hpp"

using namespace lmte;

namespace {

std::string error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

Dataset mixed_train(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::discrete_distribution<int> cat({0.6, 0.3, 0.1});
  const Schema s({{"a", ColumnKind::numerical, {}},
                  {"flat", ColumnKind::numerical, {}},
                  {"k", ColumnKind::categorical, {"x", "y", "z"}},
                  {"b", ColumnKind::numerical, {}}});
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), 4);
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) << 2.0 * g(rng), 7.0, cat(rng), 10.0 + 0.5 * g(rng);
  return Dataset(s, v);
}

LeafModel logistic_leaf(Eigen::VectorXd w, double b) {
  LeafModel m;
  m.kind = LeafKind::logistic;
  m.weights = std::move(w);
  m.intercept = b;
  return m;
}

// Two-level tree on an identity space of width 3.
LinearModelTree random_tree(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> feat(0, 2);
  std::normal_distribution<double> g;
  LinearModelTree t;
  t.space = FeatureSpace::identity(3);
  t.config.task = Task::classification;
  auto leaf = [&] { return logistic_leaf(Eigen::Vector3d(g(rng), g(rng), g(rng)), g(rng)); };
  t.nodes.resize(5);
  t.nodes[0] = {feat(rng), g(rng), 1, 4, 0, 50, leaf()};
  t.nodes[1] = {feat(rng), g(rng), 2, 3, 1, 25, leaf()};
  t.nodes[2] = {-1, 0.0, -1, -1, 2, 10, leaf()};
  t.nodes[3] = {-1, 0.0, -1, -1, 2, 15, leaf()};
  t.nodes[4] = {-1, 0.0, -1, -1, 1, 25, leaf()};
  return t;
}

std::vector<RankedAttribution> ranked(const std::vector<std::pair<std::string, double>>& values) {
  std::vector<RankedAttribution> out;
  for (const auto& [f, v] : values) out.push_back({f, "", v, v});
  return out;
}

struct Blobs {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

Blobs blobs(int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Blobs b{Eigen::MatrixXd(2 * per_class, 3), Eigen::VectorXd(2 * per_class)};
  for (int i = 0; i < 2 * per_class; ++i) {
    const double c = i < per_class ? -3.0 : 3.0;
    b.X.row(i) << c + g(rng), c + g(rng), g(rng);
    b.y(i) = i < per_class ? 0.0 : 1.0;
  }
  return b;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("classification fidelity") {
  const Eigen::VectorXd a = (Eigen::VectorXd(4) << 1, 0, 1, 1).finished();
  CHECK(fidelity_classification(a, a) == 1.0);
  CHECK(fidelity_classification(a, (1.0 - a.array()).matrix()) == 0.0);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(50), o = Eigen::VectorXd::Ones(50);
  o(17) = 0.0;
  CHECK(fidelity_classification(s, o) == doctest::Approx(0.98));
  CHECK(error_code([&] { fidelity_classification(a, s); }) == "dimension_mismatch");
}

TEST_CASE("regression fidelity is the standardized RMSE") {
  const Eigen::VectorXd o = (Eigen::VectorXd(5) << 1, 4, 2, 8, 5).finished();
  CHECK(fidelity_regression(o, o) == 0.0);
  CHECK(fidelity_regression(Eigen::VectorXd::Constant(5, o.mean()), o) == doctest::Approx(1.0));
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  Eigen::VectorXd s(10), t(10);
  for (int i = 0; i < 10; ++i) {
    s(i) = g(rng);
    t(i) = g(rng);
  }
  double mean = 0.0, sq = 0.0, var = 0.0;
  for (int i = 0; i < 10; ++i) mean += t(i) / 10.0;
  for (int i = 0; i < 10; ++i) {
    sq += (s(i) - t(i)) * (s(i) - t(i));
    var += (t(i) - mean) * (t(i) - mean);
  }
  CHECK(fidelity_regression(s, t) == doctest::Approx(std::sqrt(sq / 10.0) / std::sqrt(var / 10.0)).epsilon(1e-12));
  CHECK(error_code([&] { fidelity_regression(s, Eigen::VectorXd::Constant(10, 2.0)); }) == "degenerate_target");
  CHECK(error_code([] { fidelity_regression(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)); }) == "empty_input");
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(error_code([] { median({}); }) == "empty_input");
}

TEST_CASE("URS sampling statistics") {
  const Dataset train = mixed_train(400, 1);
  const auto stats = TrainStats::from(train);
  const Row x = Eigen::Vector4d(1.0, 7.0, 2.0, 9.0);
  const std::size_t n = 2000;
  const Dataset s = urs_sample(stats, x, n, 3);
  REQUIRE(s.rows() == static_cast<Eigen::Index>(n));
  CHECK((s.values().col(1).array() == 7.0).all());
  for (Eigen::Index j : {0, 3}) {
    const double bound = 3.0 * stats.stdev(j) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(s.values().col(j).mean() - x(j)) <= bound);
  }
  std::vector<double> freq(3, 0.0);
  for (Eigen::Index i = 0; i < s.rows(); ++i) freq[static_cast<std::size_t>(s.category(i, 2))] += 1.0 / n;
  const auto& train_freq = stats.frequencies[2];
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(freq[c] - train_freq[c]) <= 0.1);

  const Eigen::ArrayXd na = s.values().col(0).array() - s.values().col(0).mean();
  const Eigen::ArrayXd nb = s.values().col(3).array() - s.values().col(3).mean();
  const double corr = (na * nb).sum() / std::sqrt(na.square().sum() * nb.square().sum());
  CHECK(std::abs(corr) <= 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(urs_sample(stats, x, 50, 9).values() == urs_sample(stats, x, 50, 9).values());
}

TEST_CASE("coverage and precision: trivial rules") {
  const Dataset rows = lmte::test::gaussian_dataset(30, 3, 2);
  const auto space = FeatureSpace::identity(3);
  const auto leaf = logistic_leaf(Eigen::Vector3d(1.0, 0.0, 0.0), 0.0);
  const Eigen::VectorXd labels = (rows.values().col(0).array() > 0.0).cast<double>().matrix();
  const auto all = coverage_precision(RuleConjunction{}, leaf, space, Dataset(space.schema(), rows.values()), labels);
  CHECK(all.coverage == 1.0);
  REQUIRE(all.precision);
  CHECK(*all.precision == 1.0);

  LinearModelTree t;
  t.space = space;
  t.config.task = Task::classification;
  t.nodes.resize(3);
  t.nodes[0] = {0, 100.0, 1, 2, 0, 30, leaf};
  t.nodes[1] = {-1, 0.0, -1, -1, 1, 30, leaf};
  t.nodes[2] = {-1, 0.0, -1, -1, 1, 0, leaf};
  const auto far = decision_path(t, Eigen::Vector3d(200.0, 0.0, 0.0));
  const auto none = coverage_precision(far, leaf, space, Dataset(space.schema(), rows.values()), labels);
  CHECK(none.coverage == 0.0);
  CHECK_FALSE(none.precision);
}

TEST_CASE("coverage and precision agree with per-row routing on 50 rows") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_tree(rng);
    const Dataset rows(t.space.schema(), lmte::test::gaussian_dataset(50, 3, static_cast<std::uint64_t>(trial)).values());
    Eigen::VectorXd labels(50);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < 50; ++i) labels(i) = coin(rng);
    const Eigen::Vector3d x = rows.values().row(0).transpose();
    const auto rule = decision_path(t, x);
    const auto& leaf = t.leaf_model(rule.leaf_id);
    const auto cp = coverage_precision(rule, leaf, t.space, rows, labels);

    int covered = 0, correct = 0;
    for (int i = 0; i < 50; ++i) {
      const Eigen::Vector3d r = rows.values().row(i).transpose();
      if (t.leaf_for(r) != rule.leaf_id) continue;
      ++covered;
      const double p = 1.0 / (1.0 + std::exp(-(leaf.weights.dot(r) + leaf.intercept)));
      correct += (p >= 0.5 ? 1.0 : 0.0) == labels(i);
    }
    CHECK(cp.covered == static_cast<std::size_t>(covered));
    CHECK(cp.coverage == doctest::Approx(covered / 50.0));
    REQUIRE(cp.precision);
    CHECK(*cp.precision == doctest::Approx(static_cast<double>(correct) / covered));
  }
}

TEST_CASE("recall faithfulness") {
  const auto r = ranked({{"a", 5.0}, {"b", -4.0}, {"c", 0.1}, {"d", 0.0}});
  CHECK(recall_faithfulness(r, {"a", "b"}) == 1.0);
  CHECK(recall_faithfulness(r, {"c", "d"}) == 0.0);
  CHECK(recall_faithfulness(r, {"a", "d"}) == 0.5);
  // d = 5: top ceil(5/2) = 3
  CHECK(recall_faithfulness(ranked({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}}), {"c"}) == 1.0);
  CHECK(recall_faithfulness(ranked({{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}}), {"b"}) == 0.0);
  CHECK(error_code([&] { recall_faithfulness(r, {}); }) == "empty_input");

  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::pair<std::string, double>> v;
    for (int i = 0; i < 9; ++i) v.emplace_back("f" + std::to_string(i), g(rng));
    std::set<std::string> truth{"f0", "f3", "f8"};
    auto sorted = v;
    std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return std::abs(a.second) > std::abs(b.second); });
    int hits = 0;
    for (int i = 0; i < 5; ++i) hits += truth.count(sorted[static_cast<std::size_t>(i)].first);
    CHECK(recall_faithfulness(ranked(v), truth) == doctest::Approx(hits / 3.0));
  }
}

TEST_CASE("exponential kernel weights") {
  Eigen::MatrixXd X(3, 2);
  X << 0, 0,  //
      1, 0,   //
      3, 4;
  const Eigen::Vector2d c(0, 0);
  const auto w = exponential_kernel_weights(X, c, 2.0);
  CHECK(w(0) == 1.0);
  CHECK(w(1) == doctest::Approx(std::exp(-0.25)));
  CHECK(w(2) == doctest::Approx(std::exp(-25.0 / 4.0)));
  const double sigma = 0.75 * std::sqrt(2.0);
  CHECK(exponential_kernel_weights(X, c)(1) == doctest::Approx(std::exp(-1.0 / (sigma * sigma))));
  CHECK(error_code([&] { exponential_kernel_weights(X, Eigen::Vector3d::Zero()); }) == "dimension_mismatch");
}

TEST_CASE("CART depth 1 recovers a 1-D threshold within one gap") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> xs(80);
  for (double& x : xs) x = u(rng);
  std::sort(xs.begin(), xs.end());
  Eigen::MatrixXd X(80, 1);
  Eigen::VectorXd y(80);
  for (int i = 0; i < 80; ++i) {
    X(i, 0) = xs[static_cast<std::size_t>(i)];
    y(i) = xs[static_cast<std::size_t>(i)] > 6.2 ? 1.0 : 0.0;
  }
  CartConfig cc;
  cc.max_depth = 1;
  const auto tree = fit_cart(X, y, cc);
  REQUIRE(tree.nodes[0].feature == 0);
  const auto hi = std::upper_bound(xs.begin(), xs.end(), 6.2);
  REQUIRE(hi != xs.begin());
  CHECK(tree.nodes[0].threshold >= *(hi - 1));
  CHECK(tree.nodes[0].threshold < *hi);
  CHECK(tree.depth() == 1);
  for (int i = 0; i < 80; ++i) CHECK(tree.predict(X.row(i).transpose()) == y(i));
}

TEST_CASE("reference forest: separable blobs, determinism and the single-tree case") {
  const auto b = blobs(100, 6);
  ForestConfig fc;
  fc.n_trees = 25;
  fc.seed = 2;
  const auto forest = fit_reference_forest(b.X, b.y, fc);
  int correct = 0;
  for (Eigen::Index i = 0; i < b.X.rows(); ++i) correct += forest.predict(b.X.row(i).transpose()) == b.y(i);
  CHECK(correct >= 0.95 * b.X.rows());
  const auto again = fit_reference_forest(b.X, b.y, fc);
  for (Eigen::Index i = 0; i < b.X.rows(); ++i) CHECK(again.score(b.X.row(i).transpose()) == forest.score(b.X.row(i).transpose()));

  ForestConfig single;
  single.n_trees = 1;
  single.max_features = -1;
  single.bootstrap = false;
  const auto one = fit_reference_forest(b.X, b.y, single);
  const auto cart = fit_cart(b.X, b.y, CartConfig{});
  for (Eigen::Index i = 0; i < b.X.rows(); ++i) CHECK(one.predict(b.X.row(i).transpose()) == cart.predict(b.X.row(i).transpose()));

  CHECK(error_code([&] { fit_reference_forest(b.X, Eigen::VectorXd::Zero(b.X.rows()), fc); }) == "degenerate_labels");
  ForestConfig reg = fc;
  reg.task = Task::regression;
  const Eigen::VectorXd target = b.X.col(0) * 2.0;
  const auto rf = fit_reference_forest(b.X, target, reg);
  CHECK(std::abs(rf.predict(b.X.row(0).transpose()) - target(0)) < 2.0);
}

TEST_CASE("bundled datasets are deterministic and round-trip through disk") {
  const auto ids = bundled_dataset_ids();
  CHECK(ids.size() >= 5);
  const auto dir = std::filesystem::temp_directory_path() / "lmte_bundled_test";
  std::filesystem::remove_all(dir);
  const auto written = write_bundled_datasets(dir);
  CHECK(written.size() == 2 * ids.size());
  for (const auto& id : ids) {
    CAPTURE(id);
    const auto a = make_bundled_dataset(id);
    CHECK(a.data.values() == make_bundled_dataset(id).data.values());
    const auto b = load_bundled_dataset(id, dir);
    CHECK(b.task == a.task);
    CHECK(b.label == a.label);
    CHECK(b.data.schema() == a.data.schema());
    CHECK((b.data.values() - a.data.values()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, a.data.values().cwiseAbs().maxCoeff()));
  }
  std::filesystem::remove_all(dir);
  CHECK(error_code([] { make_bundled_dataset("nope"); }) != "");
}

TEST_CASE("experiment config validation") {
  CHECK(error_code([] { ExperimentConfig::from_json(json{{"dataset", "credit"}}); }) == "invalid_config");
  CHECK(error_code([] { ExperimentConfig::from_json(json{{"experiment", "recall"}}); }) == "invalid_config");
  CHECK(error_code([] {
          ExperimentConfig::from_json(json{{"experiment", "recall"}, {"dataset", "credit"}, {"linear_kernel", "gauss"}});
        }) == "invalid_config");
  CHECK(error_code([] { run_experiment(json{{"experiment", "telepathy"}, {"dataset", "credit"}}); }) == "unknown_experiment");
  CHECK(error_code([] { run_experiment(json{{"experiment", "end_to_end"}, {"dataset", "credit"}, {"test_points", 0}}); }) ==
        "empty_report");
  const auto c = ExperimentConfig::from_json(json{{"experiment", "recall"}, {"dataset", "credit"}, {"test_points", 3}});
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("surrogate power report: aggregates are recomputable from records") {
  const auto data_dir = lmte::test::source_dir() + "/data";
  for (const std::string kernel : {"none", "exponential"}) {
    CAPTURE(kernel);
    const auto rep = run_experiment(json{{"experiment", "surrogate_power"},
                                         {"dataset", "friedman1"},
                                         {"data_dir", data_dir},
                                         {"test_points", 3},
                                         {"urs_samples", 200},
                                         {"forest", {{"n_trees", 10}}},
                                         {"linear_kernel", kernel}});
    CHECK(rep.aggregation == "median");
    REQUIRE(rep.records.size() == 3);
    std::vector<double> lmt;
    for (const auto& r : rep.records) lmt.push_back(r["lmt"].get<double>());
    std::sort(lmt.begin(), lmt.end());
    CHECK(rep.aggregates["lmt"].get<double>() == lmt[1]);
    CHECK(!rep.to_text().empty());
    CHECK(rep.to_json()["records"].size() == 3);
  }
}

}  // TEST_SUITE
