#include <algorithm>
#include <numeric>

#include "test_util.hpp"

#include "lmte/explain.hpp"

using namespace lmte;

namespace {

const Eigen::Vector4d kTrueWeights(3.0, -2.0, 0.5, 1.5);

Dataset scaled_train(std::size_t n, std::uint64_t seed) {
  Dataset d = lmte::test::gaussian_dataset(n, 4, seed);
  Eigen::MatrixXd v = d.values();
  v.col(0) *= 10.0;
  v.col(2) = v.col(2).array() * 0.1 + 5.0;
  return Dataset(d.schema(), v);
}

std::shared_ptr<Oracle> linear_oracle() {
  return std::make_shared<InProcessOracle>(Task::regression, [](const Dataset& d) {
    return Prediction{(d.values() * kTrueWeights).array() + 7.0, {}};
  });
}

// class 1 iff x1 + x2 > 0
std::shared_ptr<Oracle> halfplane_oracle() {
  return std::make_shared<InProcessOracle>(Task::classification, [](const Dataset& d) {
    const Eigen::ArrayXd s = d.values().col(0).array() + d.values().col(1).array();
    return Prediction{(s > 0.0).cast<double>().matrix(), (1.0 / (1.0 + (-s).exp())).matrix()};
  });
}

SessionConfig quick(Task task, int epochs = 150) {
  SessionConfig c = SessionConfig::defaults(task);
  c.gan.epochs = epochs;
  c.seed = 5;
  return c;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

Explanation from_values(const std::vector<std::pair<std::string, double>>& values) {
  Explanation e;
  std::size_t i = 0;
  for (const auto& [name, v] : values) {
    Attribution a;
    a.feature = name;
    a.index = i++;
    a.value = v;
    a.coefficient = v;
    e.attributions.push_back(a);
  }
  return e;
}

LinearModelTree lending_tree() {
  std::vector<Column> cols{{"acc_open_past_24mths", ColumnKind::numerical, {}},
                           {"all_util", ColumnKind::numerical, {}},
                           {"grade", ColumnKind::categorical, {"A", "B"}}};
  std::vector<EncodedFeature> feats{{"acc_open_past_24mths", 0, FeatureKind::numerical, -1, "", 0.0, 1.0},
                                    {"all_util", 1, FeatureKind::numerical, -1, "", 0.0, 1.0},
                                    {"grade", 2, FeatureKind::indicator, 0, "A", 0.0, 1.0},
                                    {"grade", 2, FeatureKind::indicator, 1, "B", 0.0, 1.0}};
  LinearModelTree t;
  t.space = FeatureSpace(Schema(cols), feats);
  t.config.task = Task::regression;
  auto leaf = [](double w0, double w1, double wa, double wb, double b) {
    LeafModel m;
    m.weights = Eigen::Vector4d(w0, w1, wa, wb);
    m.intercept = b;
    return m;
  };
  t.nodes.resize(5);
  t.nodes[0] = {0, 3.5, 1, 2, 0, 100, leaf(0, 0, 0, 0, 0)};
  t.nodes[1] = {-1, 0.0, -1, -1, 1, 40, leaf(1.0, 0.1, 0, 0, 0.0)};
  t.nodes[2] = {1, 81.4, 3, 4, 1, 60, leaf(0, 0, 0, 0, 0)};
  t.nodes[3] = {-1, 0.0, -1, -1, 2, 30, leaf(0.2, -0.05, 2.0, -1.0, 1.0)};
  t.nodes[4] = {-1, 0.0, -1, -1, 2, 30, leaf(-0.3, 0.4, 0.0, 5.0, -2.0)};
  return t;
}

}  // namespace

TEST_SUITE("explain") {

TEST_CASE("session config validation and json round trip") {
  const auto d = SessionConfig::defaults(Task::classification);
  CHECK(d.k == 20);
  CHECK(d.n_synthetic == 500);
  CHECK(d.lmt.task == Task::classification);
  CHECK_THROWS_AS(SessionConfig::from_json(json{{"k", 0}}, Task::regression), Error);
  CHECK_THROWS_AS(SessionConfig::from_json(json{{"n_synthetic", 0}}, Task::regression), Error);
  CHECK_THROWS_AS(SessionConfig::from_json(json{{"probability_labels", true}}, Task::regression), Error);
  const auto p = SessionConfig::from_json(json{{"probability_labels", true}}, Task::classification);
  CHECK(p.lmt.task == Task::regression);
  auto c = quick(Task::regression, 40);
  c.k = 30;
  c.transforms.use_boxcox = false;
  CHECK(SessionConfig::from_json(c.to_json(), Task::regression).to_json() == c.to_json());
}

TEST_CASE("neighborhood: default sizes, provenance and determinism") {
  const Dataset train = scaled_train(200, 1);
  auto oracle = linear_oracle();
  const Row x = train.row(3);
  const auto cfg = quick(Task::regression);
  const auto a = generate_neighborhood(train, x, *oracle, cfg);
  CHECK(a.rows.rows() == 500);
  CHECK(a.labels.size() == 500);
  CHECK(a.provenance.k == 20);
  CHECK(a.provenance.neighbor_rows.size() == 20);
  CHECK(a.provenance.neighbor_rows[0] == 3);
  CHECK(a.task == Task::regression);
  const auto b = generate_neighborhood(train, x, *oracle, cfg);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(Neighborhood::from_json(a.to_json()).to_json().dump() == a.to_json().dump());
  auto other = cfg;
  other.seed = 6;
  CHECK(generate_neighborhood(train, x, *oracle, other).to_json().dump() != a.to_json().dump());
}

TEST_CASE("neighborhood: K equal to the training size uses the whole set") {
  const Dataset train = scaled_train(40, 2);
  auto oracle = linear_oracle();
  auto cfg = quick(Task::regression, 30);
  cfg.k = 40;
  cfg.n_synthetic = 60;
  const auto nb = generate_neighborhood(train, train.row(0), *oracle, cfg);
  std::vector<Eigen::Index> rows = nb.provenance.neighbor_rows;
  std::sort(rows.begin(), rows.end());
  std::vector<Eigen::Index> all(40);
  std::iota(all.begin(), all.end(), 0);
  CHECK(rows == all);
  CHECK(nb.rows.rows() == 60);
}

TEST_CASE("linear oracle: attributions are proportional to the true coefficients") {
  const Dataset train = scaled_train(300, 3);
  auto oracle = linear_oracle();
  for (int depth : {0, 2, 4}) {
    CAPTURE(depth);
    auto cfg = quick(Task::regression);
    cfg.lmt.max_depth = depth;
    const auto s = fit_session(train, train.row(10), *oracle, cfg);
    Eigen::VectorXd raw(4);
    for (std::size_t i = 0; i < 4; ++i) raw(static_cast<Eigen::Index>(i)) = s.explanation.attributions[i].raw_coefficient;
    CHECK(cosine(raw, kTrueWeights) >= 0.99);
    if (depth == 0) CHECK(s.explanation.context.conditions.empty());
    REQUIRE(s.explanation.fidelity);
    CHECK(*s.explanation.fidelity <= 0.01);  // standardized RMSE
    REQUIRE(s.explanation.oracle_prediction);
    CHECK(*s.explanation.oracle_prediction == doctest::Approx(train.row(10).dot(kTrueWeights) + 7.0));
  }
}

TEST_CASE("property: attribution completeness and context self-consistency") {
  const Dataset train = scaled_train(200, 4);
  auto reg = linear_oracle();
  auto cls = halfplane_oracle();
  for (int i = 0; i < 4; ++i) {
    const Row x = train.row(i * 17);
    for (auto* oracle : {reg.get(), cls.get()}) {
      auto cfg = quick(oracle->task(), 80);
      cfg.seed = static_cast<std::uint64_t>(i);
      const auto s = fit_session(train, x, *oracle, cfg);
      const auto& e = s.explanation;
      CHECK(e.attributions.size() == s.space.width());
      const double pre = s.tree.leaf_model(e.leaf_id).linear_predictor(s.space.encode_row(x));
      CHECK(std::abs(e.linear_output() - pre) <= 1e-9 * std::max(1.0, std::abs(pre)));
      CHECK(e.context.holds(x));
      CHECK(s.tree.leaf_for(s.space.encode_row(x)) == e.leaf_id);
      if (oracle->task() == Task::classification) {
        REQUIRE(e.surrogate_probability);
        CHECK(e.surrogate_prediction == (*e.surrogate_probability >= 0.5 ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("pipeline determinism and session round trip") {
  const Dataset train = scaled_train(150, 5);
  auto oracle = halfplane_oracle();
  const auto cfg = quick(Task::classification, 80);
  const auto a = fit_session(train, train.row(1), *oracle, cfg);
  const auto b = fit_session(train, train.row(1), *oracle, cfg);
  CHECK(a.to_json().dump() == b.to_json().dump());
  const auto back = FittedSession::from_json(a.to_json());
  CHECK(back.to_json().dump() == a.to_json().dump());
  CHECK(back.explanation.to_json(back.schema()).dump() == a.explanation.to_json(a.schema()).dump());
}

TEST_CASE("explain_point errors") {
  const Dataset train = scaled_train(100, 6);
  auto oracle = linear_oracle();
  auto cfg = quick(Task::regression, 20);
  cfg.n_synthetic = 30;
  const auto nb = generate_neighborhood(train, train.row(0), *oracle, cfg);
  const auto space = FeatureSpace::fit(train);
  auto lmt = LmtConfig::defaults(Task::regression);
  lmt.min_leaf = 40;
  try {
    explain_point(train.row(0), nb, lmt, space);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == "config_error");
  }
  CHECK_THROWS_AS(explain_point(train.row(0), nb, LmtConfig::defaults(Task::classification), space), Error);
}

TEST_CASE("what-if: raising all_util above 81.4 moves the point to another leaf") {
  const auto t = lending_tree();
  const Row x = Eigen::Vector3d(24.0, 78.0, 0.0);
  const auto base = explain_with_tree(t, x);
  CHECK(base.context.to_string() == "acc_open_past_24mths > 3.5 AND all_util <= 81.4");
  CHECK(base.leaf_id == 3);

  const auto moved = what_if(t, x, json{{"all_util", 90.0}});
  REQUIRE(moved.leaf_changed);
  CHECK(*moved.leaf_changed);
  CHECK(moved.leaf_id == 4);
  CHECK(moved.context.to_string() == "acc_open_past_24mths > 3.5 AND all_util > 81.4");
  CHECK(moved.context.holds(moved.point));
  const auto before_top = top_attributions(base);
  const auto after_top = top_attributions(moved);
  // before: acc 0.2*24 = 4.8, all_util -0.05*78 = -3.9, grade=A 2.0
  // after:  all_util 0.4*90 = 36, acc -0.3*24 = -7.2, grade=A 0
  REQUIRE(before_top.size() == 3);
  CHECK(before_top[0].feature == "acc_open_past_24mths");
  CHECK(before_top[0].value == doctest::Approx(4.8));
  CHECK(before_top[1].feature == "all_util");
  CHECK(before_top[1].value == doctest::Approx(-3.9));
  CHECK(before_top[2].feature == "grade");
  CHECK(before_top[2].value == doctest::Approx(2.0));
  CHECK(after_top[0].feature == "all_util");
  CHECK(after_top[0].value == doctest::Approx(36.0));
  CHECK(after_top[1].feature == "acc_open_past_24mths");
  CHECK(after_top[1].value == doctest::Approx(-0.3 * 24.0));
}

TEST_CASE("what-if: identity and in-region overrides") {
  const auto t = lending_tree();
  const Row x = Eigen::Vector3d(24.0, 78.0, 1.0);
  const auto base = explain_with_tree(t, x);
  auto same = what_if(t, x, json::object());
  REQUIRE(same.leaf_changed);
  CHECK_FALSE(*same.leaf_changed);
  same.leaf_changed.reset();
  const Schema& schema = t.space.schema();
  CHECK(same.to_json(schema).dump() == base.to_json(schema).dump());
  CHECK(what_if(t, x, nullptr).leaf_id == base.leaf_id);

  const auto inside = what_if(t, x, json{{"all_util", 50.0}, {"grade", "A"}});
  CHECK_FALSE(*inside.leaf_changed);
  CHECK(inside.context.to_string() == base.context.to_string());
  CHECK(inside.attributions[1].value == doctest::Approx(-0.05 * 50.0));
  CHECK(inside.attributions[2].value == 2.0);
  CHECK(inside.attributions[3].value == 0.0);
  CHECK(inside.linear_output() == doctest::Approx(0.2 * 24 - 0.05 * 50 + 2.0 + 1.0));

  const auto ranked = ranked_attributions(inside);
  const auto grade = std::find_if(ranked.begin(), ranked.end(), [](const auto& r) { return r.feature == "grade"; });
  REQUIRE(grade != ranked.end());
  CHECK(grade->category == "A");
  CHECK(grade->value == 2.0);
}

TEST_CASE("what-if: override errors") {
  const auto t = lending_tree();
  const Row x = Eigen::Vector3d(24.0, 78.0, 0.0);
  auto code = [&](const json& overrides) {
    try {
      what_if(t, x, overrides);
    } catch (const Error& e) {
      return e.code();
    }
    return std::string();
  };
  CHECK(code(json{{"income", 3.0}}) == "unknown_feature");
  CHECK(code(json{{"grade", "Z"}}) == "unknown_category");
  CHECK(code(json{{"grade", 1}}) == "unknown_category");
  CHECK(code(json{{"all_util", "high"}}) == "invalid_overrides");
  CHECK(code(json::array({1, 2})) == "invalid_overrides");
}

TEST_CASE("top attributions: ordering rules") {
  const auto e = from_values({{"a", 3.0}, {"b", -5.0}, {"c", 0.0}});
  const auto top = top_attributions(e, 5);
  REQUIRE(top.size() == 3);
  CHECK(top[0].feature == "b");
  CHECK(top[1].feature == "a");
  CHECK(top[2].feature == "c");
  const auto tied = top_attributions(from_values({{"p", 1.0}, {"q", -1.0}, {"r", 1.0}}), 2);
  REQUIRE(tied.size() == 2);
  CHECK(tied[0].feature == "p");
  CHECK(tied[1].feature == "q");
  CHECK_THROWS_AS(top_attributions(e, 0), Error);
}

TEST_CASE("top attributions: 75 features agree with a brute-force sort") {
  std::mt19937_64 rng(75);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<std::string, double>> values;
    for (int i = 0; i < 75; ++i) values.emplace_back("f" + std::to_string(i), g(rng));
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
    const auto top = top_attributions(from_values(values), 5);
    REQUIRE(top.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(top[i].feature == sorted[i].first);
      CHECK(top[i].value == sorted[i].second);
    }
  }
}

TEST_CASE("text rendering names the rule and the top features") {
  const auto t = lending_tree();
  const auto e = explain_with_tree(t, Eigen::Vector3d(24.0, 78.0, 0.0));
  const auto text = e.to_text(t.space.schema());
  CHECK(text.find("acc_open_past_24mths > 3.5\n") != std::string::npos);
  CHECK(text.find("all_util <= 81.4\n") != std::string::npos);
  CHECK(text.find("all_util") != std::string::npos);
  const auto j = e.to_json(t.space.schema(), 2);
  CHECK(j["top_attributions"].size() == 2);
  CHECK(j["leaf_id"] == 3);
}

}  // TEST_SUITE
