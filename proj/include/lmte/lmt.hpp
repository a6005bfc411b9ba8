#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmte/encoder.hpp"

namespace lmte {

enum class Task { regression, classification };

std::string to_string(Task task);
Task task_from_string(const std::string& s);

enum class LeafKind { ridge, logistic };

/// Linear (ridge) or logistic model fitted at a tree node.
struct LeafModel {
  LeafKind kind = LeafKind::ridge;
  Eigen::VectorXd weights;
  double intercept = 0.0;
  /// Training loss: SSE for ridge, total penalized negative log-likelihood
  /// for logistic.
  double loss = 0.0;

  /// w.x + b (the logit for logistic leaves).
  double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Real value for ridge, class-1 probability for logistic.
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& X) const;

  json to_json() const;
  static LeafModel from_json(const json& doc);
};

/// Ridge regression with an unpenalized intercept:
/// (Xc'Xc + reg I) w = Xc'yc on centered data. With reg = 0 and a singular
/// system the regularization is bumped to 1e-8. Optional nonnegative row
/// weights turn it into weighted least squares.
LeafModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double reg,
                    const Eigen::VectorXd* sample_weights = nullptr);

struct LogisticOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;  // on the per-row gradient norm
};

inline constexpr double kProbabilityClip = 1e-6;

/// L2-penalized logistic regression, objective
///   sum_i nll_i + reg/2 * |w|^2   (intercept unpenalized)
/// minimized by damped Newton. Labels outside {0,1} are rejected; a
/// single-class input yields a constant leaf at 1e-6 / 1 - 1e-6.
LeafModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double reg,
                       const LogisticOptions& options = {}, const LeafModel* warm_start = nullptr,
                       const Eigen::VectorXd* sample_weights = nullptr);

enum class SplitSearch { greedy, adaptive };

struct LmtConfig {
  Task task = Task::classification;
  int max_depth = 4;
  /// 0 selects max(20, width + 1).
  int min_leaf = 0;
  SplitSearch search = SplitSearch::adaptive;
  int n_candidates = 50;
  /// Negative selects the task default (ridge 1e-3, logistic 1.0).
  double leaf_regularization = -1.0;
  std::uint64_t seed = 0;

  static LmtConfig defaults(Task task);
  int resolved_min_leaf(std::size_t width) const;
  double resolved_regularization() const;

  json to_json() const;
  static LmtConfig from_json(const json& doc, Task fallback_task = Task::classification);
};

inline constexpr double kSplitRelativeTolerance = 1e-7;

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double total_loss = 0.0;
};

/// Candidate thresholds for one feature column (midpoints between
/// consecutive distinct values; adaptive mode keeps at most n_candidates of
/// them, chosen at equally spaced quantiles of the column).
std::vector<double> split_thresholds(const Eigen::VectorXd& column, const LmtConfig& config);

/// Fits a leaf model of the kind the config's task calls for.
LeafModel fit_leaf(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LmtConfig& config,
                   const LeafModel* warm_start = nullptr);

/// Best loss-reducing split, or nullopt when none improves the unsplit leaf
/// loss by more than the relative tolerance or no split respects min_leaf.
std::optional<SplitCandidate> best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const LmtConfig& config);
std::optional<SplitCandidate> best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const LmtConfig& config, const LeafModel& parent);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int depth = 0;
  int n_rows = 0;
  LeafModel model;  // fitted at every node; used for prediction at leaves

  bool is_leaf() const noexcept { return feature < 0; }
};

enum class ConditionOp { le, gt, eq, ne };
std::string to_string(ConditionOp op);

/// One atomic test on a raw feature. Numerical tests keep the encoded
/// threshold and the encoding so that re-checking a raw row reproduces the
/// tree's routing exactly.
struct Condition {
  std::string feature;
  std::size_t column = 0;
  ConditionOp op = ConditionOp::le;
  double threshold = 0.0;  // raw units (numerical)
  std::string category;    // categorical
  int category_index = -1;
  double encoded_threshold = 0.0;
  double center = 0.0;
  double scale = 1.0;

  bool holds(const Row& raw_row) const;
  std::string to_string() const;
  json to_json() const;
};

struct RuleConjunction {
  std::vector<Condition> conditions;
  int leaf_id = -1;

  bool holds(const Row& raw_row) const;
  std::string to_string() const;
  json to_json() const;
};

class LinearModelTree {
 public:
  FeatureSpace space;
  LmtConfig config;
  std::vector<TreeNode> nodes;

  std::size_t width() const noexcept { return space.width(); }
  int leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  const LeafModel& leaf_model(int leaf_id) const { return nodes.at(static_cast<std::size_t>(leaf_id)).model; }
  int depth() const;
  int leaf_count() const;
  double total_leaf_loss() const;

  json to_json() const;
  static LinearModelTree from_json(const json& doc);
};

/// Grows the tree depth-first: fit the node model, and split while
/// depth < max_depth and best_split finds a candidate.
LinearModelTree fit_lmt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LmtConfig& config,
                        FeatureSpace space = {});

/// Routes left iff value <= threshold; returns the leaf model's output.
double predict(const LinearModelTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd predict_rows(const LinearModelTree& tree, const Eigen::MatrixXd& X);

/// Path conditions in raw feature names, with repeated bounds on one
/// numerical feature merged into the tightest interval and indicator
/// splits rendered as = / != on the category.
RuleConjunction decision_path(const LinearModelTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace lmte
