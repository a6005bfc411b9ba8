#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lmte/explain.hpp"
#include "lmte/lmt.hpp"
#include "lmte/oracle.hpp"
#include "lmte/tabular.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Metrics

/// Fraction of positions where the two label vectors agree.
double fidelity_classification(const Eigen::VectorXd& surrogate, const Eigen::VectorXd& oracle);
/// RMSE(surrogate, oracle) / population stdev(oracle). Throws
/// Error("degenerate_target") when the oracle predictions are constant.
double fidelity_regression(const Eigen::VectorXd& surrogate, const Eigen::VectorXd& oracle);

double median(std::vector<double> values);

/// Per-column statistics of a training set, for perturbation sampling.
struct TrainStats {
  Schema schema;
  Eigen::VectorXd mean;   // numerical columns
  Eigen::VectorXd stdev;  // population stdev, numerical columns
  std::vector<std::vector<double>> frequencies;  // categorical columns, normalized

  static TrainStats from(const Dataset& train);
};

/// Independent per-feature perturbation around x_t: numerical cells are
/// x_t + N(0,1) * stdev, categorical cells follow the training frequencies.
Dataset urs_sample(const TrainStats& stats, const Row& x_t, std::size_t n, std::uint64_t seed);

struct CoveragePrecision {
  double coverage = 0.0;
  std::optional<double> precision;  // absent when no row is covered
  std::size_t covered = 0;
};

/// Coverage of the rule over `rows`; precision compares the leaf model's
/// class (probability >= 0.5) with the oracle labels on covered rows.
CoveragePrecision coverage_precision(const RuleConjunction& context, const LeafModel& leaf, const FeatureSpace& space,
                                     const Dataset& rows, const Eigen::VectorXd& oracle_labels);
CoveragePrecision coverage_precision(const RuleConjunction& context, const LeafModel& leaf, const FeatureSpace& space,
                                     const Dataset& rows, Oracle& oracle);

/// exp(-|x_i - center|^2 / width^2) per row of X; width <= 0 selects
/// 0.75 * sqrt(X.cols()).
Eigen::VectorXd exponential_kernel_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& center, double width = 0.0);

/// |top-ceil(d/2) features by |value|  ∩  true| / |true|, with d the
/// number of ranked features and ties broken by list order.
double recall_faithfulness(const std::vector<RankedAttribution>& ranked, const std::set<std::string>& true_features);

// ---------------------------------------------------------------------------
// Reference target models

struct CartConfig {
  Task task = Task::classification;
  int max_depth = -1;  // unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  int max_features = 0;  // 0 = all features
};

struct CartNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // majority class or mean target
  double positive = 0.0;  // class-1 fraction (classification)
  int n = 0;
};

/// CART on a plain numeric matrix (Gini impurity or squared error);
/// routes left iff value <= threshold.
class DecisionTree {
 public:
  Task task = Task::classification;
  std::vector<CartNode> nodes;

  int leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Split features used along x's root-to-leaf path, in path order.
  std::vector<int> path_features(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  int depth() const;
};

DecisionTree fit_cart(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CartConfig& config,
                      std::mt19937_64* rng = nullptr);

struct ForestConfig {
  Task task = Task::classification;
  int n_trees = 100;
  int max_depth = -1;
  int min_samples_leaf = 1;
  /// 0 selects ceil(sqrt(d)) for classification and ceil(d / 3) for
  /// regression; -1 uses every feature.
  int max_features = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

class ReferenceForest {
 public:
  ForestConfig config;
  std::vector<DecisionTree> trees;

  /// Class-1 vote fraction (classification) or mean prediction.
  double score(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Majority vote (class 1 iff vote fraction > 0.5) or mean.
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Throws Error("degenerate_labels") when classification labels hold fewer
/// than two classes or are not in {0, 1}.
ReferenceForest fit_reference_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& config);

/// Wraps a forest or tree trained on plain_matrix(features) as an oracle.
std::shared_ptr<Oracle> forest_oracle(std::shared_ptr<const ReferenceForest> forest, Schema features);
std::shared_ptr<Oracle> tree_oracle(std::shared_ptr<const DecisionTree> tree, Schema features);

/// Schema column owning each plain_matrix column.
std::vector<std::size_t> plain_column_owners(const Schema& schema);

// ---------------------------------------------------------------------------
// Bundled datasets

struct BundledDataset {
  std::string id;
  Task task = Task::classification;
  std::string label;  // label column name inside `data`
  Dataset data;
};

std::vector<std::string> bundled_dataset_ids();
/// Deterministic generator for each bundled dataset.
BundledDataset make_bundled_dataset(const std::string& id);
/// Writes {id}.csv and {id}.schema.json for every bundled dataset.
std::vector<std::filesystem::path> write_bundled_datasets(const std::filesystem::path& dir);
/// Reads {dir}/{id}.csv with its schema sidecar, or generates the dataset
/// when the files are absent.
BundledDataset load_bundled_dataset(const std::string& id, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::string experiment;  // surrogate_power | cross_generalization | end_to_end | coverage_precision | recall | artificial
  std::string dataset;
  std::filesystem::path data_dir = "data";
  int test_points = 25;
  int batch_size = 100;      // coverage_precision batches
  std::size_t urs_samples = 500;
  double test_fraction = 0.25;
  int target_depth = 3;      // recall target tree
  /// Row weighting of the linear baseline: "none" or "exponential".
  std::string linear_kernel = "none";
  double kernel_width = 0.0;  // 0 selects 0.75 * sqrt(encoded width)
  ForestConfig forest;
  /// SessionConfig overrides, resolved against the dataset's task.
  json session_doc = json::object();
  int jobs = 1;
  std::uint64_t seed = 0;

  static ExperimentConfig from_json(const json& doc);
  json to_json() const;
};

struct MetricReport {
  std::string experiment;
  std::string dataset;
  Task task = Task::classification;
  std::string aggregation;  // "mean" or "median"
  std::vector<json> records;
  json aggregates;

  json to_json() const;
  std::string to_text() const;
};

MetricReport run_experiment(const ExperimentConfig& config);
MetricReport run_experiment(const json& config);

}  // namespace lmte
