#include <algorithm>
#include <cmath>
#include <numeric>

#include "builtin_oracles.hpp"
#include "lmte/evalkit.hpp"
#include "util.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// CART

int DecisionTree::leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  int id = 0;
  while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    id = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return id;
}

double DecisionTree::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return nodes[static_cast<std::size_t>(leaf_for(x))].value;
}

std::vector<int> DecisionTree::path_features(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::vector<int> out;
  int id = 0;
  while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    out.push_back(n.feature);
    id = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return out;
}

int DecisionTree::depth() const {
  int d = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    const auto [id, depth] = stack.back();
    stack.pop_back();
    d = std::max(d, depth);
    const auto& n = nodes[static_cast<std::size_t>(id)];
    if (n.feature >= 0) {
      stack.push_back({n.left, depth + 1});
      stack.push_back({n.right, depth + 1});
    }
  }
  return d;
}

namespace {

struct CartBuilder {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  const CartConfig& config;
  std::mt19937_64* rng;
  DecisionTree tree;

  // Gini impurity times count, or sum of squared errors.
  double impurity(double n, double sum, double sum_sq) const {
    if (n <= 0.0) return 0.0;
    if (config.task == Task::classification) {
      const double p = sum / n;
      return n * 2.0 * p * (1.0 - p);
    }
    return std::max(0.0, sum_sq - sum * sum / n);
  }

  int build(std::vector<Eigen::Index>& idx, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const double n = static_cast<double>(idx.size());
    double sum = 0.0, sum_sq = 0.0;
    for (auto i : idx) {
      sum += y(i);
      sum_sq += y(i) * y(i);
    }
    {
      auto& node = tree.nodes.back();
      node.n = static_cast<int>(idx.size());
      if (config.task == Task::classification) {
        node.positive = sum / n;
        node.value = sum > n - sum ? 1.0 : 0.0;
      } else {
        node.value = sum / n;
      }
    }
    const double parent = impurity(n, sum, sum_sq);
    if ((config.max_depth >= 0 && depth >= config.max_depth) ||
        static_cast<int>(idx.size()) < config.min_samples_split || parent <= 1e-12)
      return id;

    const auto d = static_cast<int>(X.cols());
    std::vector<int> features(static_cast<std::size_t>(d));
    std::iota(features.begin(), features.end(), 0);
    int m = d;
    if (config.max_features > 0 && config.max_features < d && rng) {
      m = config.max_features;
      for (int j = 0; j < m; ++j) {
        std::uniform_int_distribution<int> pick(j, d - 1);
        std::swap(features[static_cast<std::size_t>(j)], features[static_cast<std::size_t>(pick(*rng))]);
      }
      std::sort(features.begin(), features.begin() + m);
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_loss = parent - 1e-12;
    std::vector<Eigen::Index> order(idx);
    for (int fi = 0; fi < m; ++fi) {
      const int f = features[static_cast<std::size_t>(fi)];
      std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return X(a, f) < X(b, f); });
      double ls = 0.0, lsq = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const double v = y(order[k]);
        ls += v;
        lsq += v * v;
        const double a = X(order[k], f), b = X(order[k + 1], f);
        if (!(a < b)) continue;
        const auto nl = static_cast<int>(k + 1);
        const auto nr = static_cast<int>(order.size()) - nl;
        if (nl < config.min_samples_leaf || nr < config.min_samples_leaf) continue;
        const double loss = impurity(nl, ls, lsq) + impurity(nr, sum - ls, sum_sq - lsq);
        if (loss < best_loss) {
          best_loss = loss;
          best_feature = f;
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<Eigen::Index> left, right;
    for (auto i : idx) (X(i, best_feature) <= best_threshold ? left : right).push_back(i);
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

void check_binary(const Eigen::VectorXd& y) {
  bool zero = false, one = false;
  for (double v : y) {
    if (v == 0.0)
      zero = true;
    else if (v == 1.0)
      one = true;
    else
      throw Error("degenerate_labels", "classification labels must be 0 or 1");
  }
  if (!zero || !one) throw Error("degenerate_labels", "classification labels contain a single class");
}

DecisionTree fit_cart_rows(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CartConfig& config,
                           std::mt19937_64* rng, std::vector<Eigen::Index> idx) {
  CartBuilder b{X, y, config, rng, {}};
  b.tree.task = config.task;
  b.build(idx, 0);
  return std::move(b.tree);
}

}  // namespace

DecisionTree fit_cart(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CartConfig& config,
                      std::mt19937_64* rng) {
  if (X.rows() == 0) throw Error("empty_input", "cannot fit a tree on zero rows");
  if (X.rows() != y.size()) throw Error("dimension_mismatch", "X and y row counts differ");
  if (config.task == Task::classification)
    for (double v : y)
      if (v != 0.0 && v != 1.0) throw Error("degenerate_labels", "classification labels must be 0 or 1");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return fit_cart_rows(X, y, config, rng, std::move(idx));
}

// ---------------------------------------------------------------------------
// Forest

double ReferenceForest::score(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  double s = 0.0;
  for (const auto& t : trees) s += t.predict(x);
  return s / static_cast<double>(trees.size());
}

double ReferenceForest::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double s = score(x);
  if (config.task == Task::regression) return s;
  return s > 0.5 ? 1.0 : 0.0;
}

ReferenceForest fit_reference_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& config) {
  if (X.rows() == 0) throw Error("empty_input", "cannot fit a forest on zero rows");
  if (X.rows() != y.size()) throw Error("dimension_mismatch", "X and y row counts differ");
  if (config.n_trees < 1) throw Error("invalid_config", "n_trees must be >= 1");
  if (config.task == Task::classification) check_binary(y);
  const auto d = static_cast<int>(X.cols());
  CartConfig cart;
  cart.task = config.task;
  cart.max_depth = config.max_depth;
  cart.min_samples_leaf = config.min_samples_leaf;
  if (config.max_features < 0)
    cart.max_features = 0;
  else if (config.max_features == 0)
    cart.max_features = config.task == Task::classification ? static_cast<int>(std::ceil(std::sqrt(d)))
                                                             : static_cast<int>(std::ceil(d / 3.0));
  else
    cart.max_features = config.max_features;

  ReferenceForest forest;
  forest.config = config;
  const auto n = X.rows();
  for (int t = 0; t < config.n_trees; ++t) {
    std::mt19937_64 rng(detail::mix_seed(config.seed, static_cast<std::uint64_t>(t)));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    if (config.bootstrap) {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (auto& i : idx) i = pick(rng);
    } else {
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    }
    forest.trees.push_back(fit_cart_rows(X, y, cart, &rng, std::move(idx)));
  }
  return forest;
}

std::vector<std::size_t> plain_column_owners(const Schema& schema) {
  std::vector<std::size_t> owners;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const std::size_t w = schema[c].kind == ColumnKind::numerical ? 1 : schema[c].categories.size();
    owners.insert(owners.end(), w, c);
  }
  return owners;
}

std::shared_ptr<Oracle> forest_oracle(std::shared_ptr<const ReferenceForest> forest, Schema features) {
  const Task task = forest->config.task;
  auto fn = [forest, features](const Dataset& rows) {
    if (!(rows.schema() == features)) throw Error("schema_mismatch", "rows do not match the forest's feature schema");
    const Eigen::MatrixXd X = plain_matrix(rows);
    Prediction p;
    p.preds.resize(X.rows());
    Eigen::VectorXd probs(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const Eigen::VectorXd x = X.row(r).transpose();
      probs(r) = forest->score(x);
      p.preds(r) = forest->predict(x);
    }
    if (forest->config.task == Task::classification) p.probs = probs;
    return p;
  };
  return std::make_shared<InProcessOracle>(task, fn, "reference-forest");
}

std::shared_ptr<Oracle> tree_oracle(std::shared_ptr<const DecisionTree> tree, Schema features) {
  auto fn = [tree, features](const Dataset& rows) {
    if (!(rows.schema() == features)) throw Error("schema_mismatch", "rows do not match the tree's feature schema");
    const Eigen::MatrixXd X = plain_matrix(rows);
    Prediction p;
    p.preds.resize(X.rows());
    Eigen::VectorXd probs(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const auto& leaf = tree->nodes[static_cast<std::size_t>(tree->leaf_for(X.row(r).transpose()))];
      p.preds(r) = leaf.value;
      probs(r) = leaf.positive;
    }
    if (tree->task == Task::classification) p.probs = probs;
    return p;
  };
  return std::make_shared<InProcessOracle>(tree->task, fn, "decision-tree");
}

// ---------------------------------------------------------------------------
// Registry entries

namespace {

std::filesystem::path resolve(const json& spec, const std::string& key) {
  if (!spec.contains(key)) throw Error("invalid_oracle", "oracle spec needs \"" + key + "\"");
  std::filesystem::path p = spec[key].get<std::string>();
  if (p.is_relative() && spec.contains("base_dir")) p = std::filesystem::path(spec["base_dir"].get<std::string>()) / p;
  return p;
}

LabeledData load_training(const json& spec) {
  std::optional<Schema> schema;
  if (spec.contains("schema")) schema = Schema::load_json(resolve(spec, "schema"));
  const Dataset data = load_csv(resolve(spec, "train_csv"), schema);
  return split_label(data, spec.value("label", std::string("label")));
}

}  // namespace

namespace detail {

void register_builtin_oracles() {
  register_oracle_model("reference-forest", [](const json& spec) {
    const auto train = load_training(spec);
    ForestConfig cfg;
    cfg.task = task_from_string(spec.at("task").get<std::string>());
    cfg.n_trees = spec.value("n_trees", cfg.n_trees);
    cfg.max_depth = spec.value("max_depth", cfg.max_depth);
    cfg.seed = spec.value("seed", cfg.seed);
    auto forest = std::make_shared<const ReferenceForest>(
        fit_reference_forest(plain_matrix(train.features), train.labels, cfg));
    return forest_oracle(forest, train.features.schema());
  });
  register_oracle_model("decision-tree", [](const json& spec) {
    const auto train = load_training(spec);
    CartConfig cfg;
    cfg.task = task_from_string(spec.at("task").get<std::string>());
    cfg.max_depth = spec.value("max_depth", 3);
    auto tree = std::make_shared<const DecisionTree>(fit_cart(plain_matrix(train.features), train.labels, cfg));
    return tree_oracle(tree, train.features.schema());
  });
  register_oracle_model("constant", [](const json& spec) -> std::shared_ptr<Oracle> {
    const Task task = task_from_string(spec.at("task").get<std::string>());
    const double value = spec.value("value", 0.0);
    return std::make_shared<InProcessOracle>(
        task,
        [task, value](const Dataset& rows) {
          Prediction p;
          p.preds = Eigen::VectorXd::Constant(rows.rows(), value);
          if (task == Task::classification) p.probs = Eigen::VectorXd::Constant(rows.rows(), value);
          return p;
        },
        "constant");
  });
}

}  // namespace detail

}  // namespace lmte
