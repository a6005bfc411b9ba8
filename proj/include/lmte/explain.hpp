#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmte/ctgan.hpp"
#include "lmte/encoder.hpp"
#include "lmte/lmt.hpp"
#include "lmte/oracle.hpp"
#include "lmte/tabular.hpp"

namespace lmte {

struct SessionConfig {
  std::size_t k = 20;
  std::size_t n_synthetic = 500;
  TransformOptions transforms;
  CtganConfig gan;
  LmtConfig lmt;
  /// Classification only: fit a regression tree on the oracle's class-1
  /// probabilities instead of its hard labels.
  bool probability_labels = false;
  std::uint64_t seed = 0;

  /// Defaults for `task`; throws Error("invalid_config") on k or n of 0.
  static SessionConfig defaults(Task task);
  void validate() const;
  json to_json() const;
  /// Missing keys keep the defaults of `task`.
  static SessionConfig from_json(const json& doc, Task task);
};

struct Provenance {
  std::string sampler = "ctgan";
  std::size_t k = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  TransformOptions transforms;
  int epochs = 0;
  std::size_t clamped = 0;  // inverse-transform clamps
  std::vector<Eigen::Index> neighbor_rows;

  json to_json() const;
  static Provenance from_json(const json& doc);
};

/// Labeled synthetic locality of one test point.
struct Neighborhood {
  Task task = Task::classification;  // the oracle's task
  Dataset rows;
  Eigen::VectorXd labels;  // class index or real value
  std::optional<Eigen::VectorXd> probs;
  Provenance provenance;

  /// Targets the surrogate is fitted on (labels, or probabilities when
  /// `probability_labels`).
  Eigen::VectorXd targets(bool probability_labels) const;

  json to_json() const;
  static Neighborhood from_json(const json& doc);
};

/// KNN locality -> reversible transforms -> conditional GAN -> sample ->
/// inverse transforms -> one batched oracle call.
Neighborhood generate_neighborhood(const Dataset& train, const Row& x_t, Oracle& oracle, const SessionConfig& config);

struct Attribution {
  std::string feature;   // source column
  std::string category;  // indicator features only
  std::size_t index = 0; // encoded feature index
  double encoded_value = 0.0;
  double coefficient = 0.0;
  /// Coefficient per raw unit (coefficient / scale for numerical features).
  double raw_coefficient = 0.0;
  double value = 0.0;  // coefficient * encoded_value
};

/// Column-level attribution: one-hot members are folded into their parent
/// and named by the active category.
struct RankedAttribution {
  std::string feature;
  std::string category;
  double value = 0.0;
  double coefficient = 0.0;

  json to_json() const;
};

struct Explanation {
  Task task = Task::classification;
  Row point;
  /// Regression value, or class label for classification.
  double surrogate_prediction = 0.0;
  std::optional<double> surrogate_probability;
  std::optional<double> oracle_prediction;
  RuleConjunction context;
  std::vector<Attribution> attributions;
  double intercept = 0.0;
  int leaf_id = -1;
  std::optional<double> fidelity;
  std::optional<bool> leaf_changed;  // what-if results only

  /// Sum of attribution values plus intercept: the leaf's pre-link output.
  double linear_output() const;

  json to_json(const Schema& schema, std::size_t top_k = 5) const;
  std::string to_text(const Schema& schema, std::size_t top_k = 5) const;
};

/// Sorted by |value| descending, ties by feature order; at most n entries.
std::vector<RankedAttribution> top_attributions(const Explanation& explanation, std::size_t n = 5);
/// All columns, ranked.
std::vector<RankedAttribution> ranked_attributions(const Explanation& explanation);

/// Surrogate response at a point given a fitted tree.
Explanation explain_with_tree(const LinearModelTree& tree, const Row& x_t, bool probability_labels = false);

/// Fits the LMT on the neighborhood (encoded through `space`) and explains
/// x_t. The tree task must match the neighborhood's target kind.
struct PointExplanation {
  LinearModelTree tree;
  Explanation explanation;
};
PointExplanation explain_point(const Row& x_t, const Neighborhood& neighborhood, const LmtConfig& lmt_config,
                               const FeatureSpace& space, bool probability_labels = false,
                               std::optional<double> oracle_prediction = std::nullopt);

/// Overrides: {"column": value, ...} with categories as strings. Re-routes
/// through the fitted tree without refitting.
Row apply_overrides(const Schema& schema, const Row& x_t, const json& overrides);
Explanation what_if(const LinearModelTree& tree, const Row& x_t, const json& overrides, bool probability_labels = false);

/// Everything one explained test point needs; immutable once fitted.
struct FittedSession {
  SessionConfig config;
  FeatureSpace space;
  Row point;
  Neighborhood neighborhood;
  LinearModelTree tree;
  Explanation explanation;

  const Schema& schema() const { return space.schema(); }

  json to_json() const;
  static FittedSession from_json(const json& doc);
};

/// Full pipeline: the feature space is standardized on `train`.
FittedSession fit_session(const Dataset& train, const Row& x_t, Oracle& oracle, const SessionConfig& config);

}  // namespace lmte
