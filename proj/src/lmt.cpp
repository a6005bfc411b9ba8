#include "lmte/lmt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

namespace lmte {

std::string to_string(Task task) { return task == Task::regression ? "regression" : "classification"; }

Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw Error("invalid_task", "unknown task '" + s + "'");
}

std::string to_string(ConditionOp op) {
  switch (op) {
    case ConditionOp::le: return "<=";
    case ConditionOp::gt: return ">";
    case ConditionOp::eq: return "=";
    case ConditionOp::ne: return "!=";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Config

LmtConfig LmtConfig::defaults(Task task) {
  LmtConfig c;
  c.task = task;
  c.max_depth = task == Task::classification ? 4 : 2;
  c.search = SplitSearch::adaptive;
  c.n_candidates = 50;
  return c;
}

int LmtConfig::resolved_min_leaf(std::size_t width) const {
  if (min_leaf > 0) return min_leaf;
  return std::max(20, static_cast<int>(width) + 1);
}

double LmtConfig::resolved_regularization() const {
  if (leaf_regularization >= 0.0) return leaf_regularization;
  return task == Task::classification ? 1.0 : 1e-3;
}

json LmtConfig::to_json() const {
  return json{{"task", lmte::to_string(task)},
              {"max_depth", max_depth},
              {"min_leaf", min_leaf},
              {"search", search == SplitSearch::greedy ? "greedy" : "adaptive"},
              {"n_candidates", n_candidates},
              {"leaf_regularization", leaf_regularization},
              {"seed", seed}};
}

LmtConfig LmtConfig::from_json(const json& doc, Task fallback_task) {
  const Task task = doc.contains("task") ? task_from_string(doc["task"].get<std::string>()) : fallback_task;
  LmtConfig c = defaults(task);
  c.max_depth = doc.value("max_depth", c.max_depth);
  c.min_leaf = doc.value("min_leaf", c.min_leaf);
  const auto search = doc.value("search", std::string("adaptive"));
  if (search != "greedy" && search != "adaptive") throw Error("invalid_config", "unknown split search '" + search + "'");
  c.search = search == "greedy" ? SplitSearch::greedy : SplitSearch::adaptive;
  c.n_candidates = doc.value("n_candidates", c.n_candidates);
  c.leaf_regularization = doc.value("leaf_regularization", c.leaf_regularization);
  c.seed = doc.value("seed", c.seed);
  if (c.max_depth < 0) throw Error("invalid_config", "max_depth must be >= 0");
  if (c.n_candidates < 1) throw Error("invalid_config", "n_candidates must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Split search

std::vector<double> split_thresholds(const Eigen::VectorXd& column, const LmtConfig& config) {
  std::vector<double> sorted(column.data(), column.data() + column.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> mids;
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) mids.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  if (config.search == SplitSearch::greedy || mids.size() <= static_cast<std::size_t>(config.n_candidates))
    return mids;

  std::vector<double> picked;
  const auto n = sorted.size();
  for (int j = 1; j <= config.n_candidates; ++j) {
    const double q = static_cast<double>(j) / (config.n_candidates + 1);
    const double v = sorted[static_cast<std::size_t>(q * static_cast<double>(n - 1))];
    const auto pos = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), v) - distinct.begin());
    if (pos < mids.size()) picked.push_back(mids[pos]);
  }
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  return picked;
}

LeafModel fit_leaf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LmtConfig& config,
                   const LeafModel* warm_start) {
  if (config.task == Task::regression) return fit_ridge(X, y, config.resolved_regularization());
  return fit_logistic(X, y, config.resolved_regularization(), {}, warm_start);
}

namespace {

void gather(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const Eigen::Index> idx,
            Eigen::MatrixXd& Xo, Eigen::VectorXd& yo) {
  Xo.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
  yo.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Xo.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    yo(static_cast<Eigen::Index>(i)) = y(idx[i]);
  }
}

}  // namespace

std::optional<SplitCandidate> best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const LmtConfig& config, const LeafModel& parent) {
  const Eigen::Index n = X.rows();
  const int min_leaf = config.resolved_min_leaf(static_cast<std::size_t>(X.cols()));
  if (n < 2 * static_cast<Eigen::Index>(min_leaf)) return std::nullopt;

  std::optional<SplitCandidate> best;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Eigen::MatrixXd Xl, Xr;
  Eigen::VectorXd yl, yr;
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    const Eigen::VectorXd col = X.col(f);
    const auto thresholds = split_thresholds(col, config);
    if (thresholds.empty()) continue;
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return col(a) < col(b); });
    std::vector<double> sorted_vals(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted_vals[i] = col(order[i]);

    for (double t : thresholds) {
      const auto left_n = static_cast<Eigen::Index>(
          std::upper_bound(sorted_vals.begin(), sorted_vals.end(), t) - sorted_vals.begin());
      if (left_n < min_leaf || n - left_n < min_leaf) continue;
      const std::span<const Eigen::Index> all(order);
      gather(X, y, all.first(static_cast<std::size_t>(left_n)), Xl, yl);
      gather(X, y, all.subspan(static_cast<std::size_t>(left_n)), Xr, yr);
      const double total = fit_leaf(Xl, yl, config, &parent).loss + fit_leaf(Xr, yr, config, &parent).loss;
      if (!std::isfinite(total)) continue;
      if (!best || total < best->total_loss) best = SplitCandidate{static_cast<int>(f), t, total};
    }
  }
  if (!best) return std::nullopt;
  const double improvement = parent.loss - best->total_loss;
  if (!(improvement > kSplitRelativeTolerance * std::abs(parent.loss)) || !(improvement > 0.0)) return std::nullopt;
  return best;
}

std::optional<SplitCandidate> best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const LmtConfig& config) {
  return best_split(X, y, config, fit_leaf(X, y, config));
}

// ---------------------------------------------------------------------------
// Tree

namespace {

int grow(LinearModelTree& tree, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int depth,
         const LeafModel* parent) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  {
    auto& node = tree.nodes.back();
    node.depth = depth;
    node.n_rows = static_cast<int>(X.rows());
    node.model = fit_leaf(X, y, tree.config, parent);
  }
  if (depth >= tree.config.max_depth) return id;
  const LeafModel model = tree.nodes[static_cast<std::size_t>(id)].model;
  const auto split = best_split(X, y, tree.config, model);
  if (!split) return id;

  std::vector<Eigen::Index> left, right;
  for (Eigen::Index i = 0; i < X.rows(); ++i) (X(i, split->feature) <= split->threshold ? left : right).push_back(i);
  Eigen::MatrixXd Xs;
  Eigen::VectorXd ys;
  gather(X, y, left, Xs, ys);
  const int l = grow(tree, Xs, ys, depth + 1, &model);
  gather(X, y, right, Xs, ys);
  const int r = grow(tree, Xs, ys, depth + 1, &model);
  auto& node = tree.nodes[static_cast<std::size_t>(id)];
  node.feature = split->feature;
  node.threshold = split->threshold;
  node.left = l;
  node.right = r;
  return id;
}

}  // namespace

LinearModelTree fit_lmt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LmtConfig& config,
                        FeatureSpace space) {
  if (X.rows() == 0) throw Error("empty_input", "cannot fit a linear model tree on zero rows");
  if (X.rows() != y.size()) throw Error("dimension_mismatch", "X and y row counts differ");
  if (space.width() == 0 && X.cols() > 0) space = FeatureSpace::identity(static_cast<std::size_t>(X.cols()));
  if (space.width() != static_cast<std::size_t>(X.cols()))
    throw Error("width_mismatch", "feature space width differs from X");
  const int min_leaf = config.resolved_min_leaf(static_cast<std::size_t>(X.cols()));
  if (X.rows() < min_leaf)
    throw Error("too_few_rows", "linear model tree needs at least min_leaf = " + std::to_string(min_leaf) +
                                    " rows, got " + std::to_string(X.rows()) +
                                    "; increase the neighborhood size");
  LinearModelTree tree;
  tree.space = std::move(space);
  tree.config = config;
  grow(tree, X, y, 0, nullptr);
  return tree;
}

int LinearModelTree::leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (static_cast<std::size_t>(x.size()) != width())
    throw Error("width_mismatch", "point width " + std::to_string(x.size()) + " != tree width " +
                                      std::to_string(width()));
  int id = 0;
  while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& n = nodes[static_cast<std::size_t>(id)];
    id = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return id;
}

int LinearModelTree::depth() const {
  int d = 0;
  for (const auto& n : nodes)
    if (n.is_leaf()) d = std::max(d, n.depth);
  return d;
}

int LinearModelTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

double LinearModelTree::total_leaf_loss() const {
  double s = 0.0;
  for (const auto& n : nodes)
    if (n.is_leaf()) s += n.model.loss;
  return s;
}

double predict(const LinearModelTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return tree.leaf_model(tree.leaf_for(x)).predict(x);
}

Eigen::VectorXd predict_rows(const LinearModelTree& tree, const Eigen::MatrixXd& X) {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(tree, X.row(i).transpose());
  return out;
}

json LinearModelTree::to_json() const {
  json ns = json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    json j{{"id", i}, {"depth", n.depth}, {"n_rows", n.n_rows}, {"model", n.model.to_json()}};
    if (!n.is_leaf()) {
      j["feature"] = n.feature;
      j["feature_name"] = space.features()[static_cast<std::size_t>(n.feature)].name;
      j["threshold"] = n.threshold;
      j["raw_threshold"] = space.decode_value(static_cast<std::size_t>(n.feature), n.threshold);
      j["left"] = n.left;
      j["right"] = n.right;
    }
    ns.push_back(std::move(j));
  }
  return json{{"format", "lmte-tree/1"},
              {"schema_fingerprint", space.fingerprint()},
              {"feature_space", space.to_json()},
              {"config", config.to_json()},
              {"nodes", std::move(ns)}};
}

LinearModelTree LinearModelTree::from_json(const json& doc) {
  if (doc.value("format", std::string()) != "lmte-tree/1")
    throw Error("invalid_tree", "unsupported tree format");
  LinearModelTree t;
  t.space = FeatureSpace::from_json(doc.at("feature_space"));
  if (doc.at("schema_fingerprint").get<std::string>() != t.space.fingerprint())
    throw Error("invalid_tree", "tree fingerprint does not match its feature space");
  t.config = LmtConfig::from_json(doc.at("config"));
  for (const auto& j : doc.at("nodes")) {
    TreeNode n;
    n.depth = j.at("depth").get<int>();
    n.n_rows = j.at("n_rows").get<int>();
    n.model = LeafModel::from_json(j.at("model"));
    if (j.contains("feature")) {
      n.feature = j.at("feature").get<int>();
      n.threshold = j.at("threshold").get<double>();
      n.left = j.at("left").get<int>();
      n.right = j.at("right").get<int>();
    }
    t.nodes.push_back(std::move(n));
  }
  const auto count = static_cast<int>(t.nodes.size());
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) continue;
    if (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count ||
        n.feature >= static_cast<int>(t.space.width()))
      throw Error("invalid_tree", "tree node references are out of range");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Rules

namespace {

std::string display_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

bool Condition::holds(const Row& raw_row) const {
  const double x = raw_row(static_cast<Eigen::Index>(column));
  switch (op) {
    case ConditionOp::le: return (x - center) / scale <= encoded_threshold;
    case ConditionOp::gt: return (x - center) / scale > encoded_threshold;
    case ConditionOp::eq: return static_cast<int>(x) == category_index;
    case ConditionOp::ne: return static_cast<int>(x) != category_index;
  }
  return false;
}

std::string Condition::to_string() const {
  const bool categorical = op == ConditionOp::eq || op == ConditionOp::ne;
  return feature + " " + lmte::to_string(op) + " " + (categorical ? category : display_number(threshold));
}

json Condition::to_json() const {
  json j{{"feature", feature}, {"op", lmte::to_string(op)}};
  if (op == ConditionOp::eq || op == ConditionOp::ne)
    j["value"] = category;
  else
    j["value"] = threshold;
  return j;
}

bool RuleConjunction::holds(const Row& raw_row) const {
  return std::all_of(conditions.begin(), conditions.end(), [&](const Condition& c) { return c.holds(raw_row); });
}

std::string RuleConjunction::to_string() const {
  if (conditions.empty()) return "(always)";
  std::string out;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    if (i) out += " AND ";
    out += conditions[i].to_string();
  }
  return out;
}

json RuleConjunction::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions) conds.push_back(c.to_json());
  return json{{"leaf_id", leaf_id}, {"conditions", std::move(conds)}, {"text", to_string()}};
}

RuleConjunction decision_path(const LinearModelTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x) {
  RuleConjunction rule;
  rule.leaf_id = tree.leaf_for(x);
  auto& conds = rule.conditions;
  auto last_for_column = [&](std::size_t column) {
    std::ptrdiff_t pos = -1;
    for (std::size_t i = 0; i < conds.size(); ++i)
      if (conds[i].column == column) pos = static_cast<std::ptrdiff_t>(i);
    return pos;
  };

  int id = 0;
  while (!tree.nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& node = tree.nodes[static_cast<std::size_t>(id)];
    const bool left = x(node.feature) <= node.threshold;
    const auto& f = tree.space.features()[static_cast<std::size_t>(node.feature)];
    id = left ? node.left : node.right;

    Condition c;
    c.feature = f.name;
    c.column = f.column;
    if (f.kind == FeatureKind::numerical) {
      c.op = left ? ConditionOp::le : ConditionOp::gt;
      c.encoded_threshold = node.threshold;
      c.center = f.center;
      c.scale = f.scale;
      c.threshold = tree.space.decode_value(static_cast<std::size_t>(node.feature), node.threshold);
      auto same = std::find_if(conds.begin(), conds.end(),
                               [&](const Condition& o) { return o.column == c.column && o.op == c.op; });
      if (same != conds.end()) {
        const bool tighter = c.op == ConditionOp::le ? c.encoded_threshold < same->encoded_threshold
                                                     : c.encoded_threshold > same->encoded_threshold;
        if (tighter) *same = c;
        continue;
      }
      const auto pos = last_for_column(c.column);
      if (pos >= 0) {
        // keep both bounds of one interval adjacent, lower bound first
        const auto at = conds.begin() + pos + (c.op == ConditionOp::le ? 1 : 0);
        conds.insert(at, c);
      } else {
        conds.push_back(c);
      }
    } else {
      c.category = f.category_name;
      c.category_index = f.category;
      c.op = left ? ConditionOp::ne : ConditionOp::eq;
      const bool has_eq = std::any_of(conds.begin(), conds.end(), [&](const Condition& o) {
        return o.column == c.column && o.op == ConditionOp::eq;
      });
      if (has_eq) continue;  // implied
      if (c.op == ConditionOp::eq) {
        const auto first = std::find_if(conds.begin(), conds.end(), [&](const Condition& o) { return o.column == c.column; });
        const auto at = first - conds.begin();
        std::erase_if(conds, [&](const Condition& o) { return o.column == c.column; });
        conds.insert(conds.begin() + std::min<std::ptrdiff_t>(at, static_cast<std::ptrdiff_t>(conds.size())), c);
      } else {
        const auto pos = last_for_column(c.column);
        if (pos >= 0)
          conds.insert(conds.begin() + pos + 1, c);
        else
          conds.push_back(c);
      }
    }
  }
  return rule;
}

}  // namespace lmte
