#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lmte/error.hpp"

namespace lmte {

using json = nlohmann::json;

/// A raw row: numerical cells hold the value, categorical cells hold the
/// category index (an integer stored as double).
using Row = Eigen::VectorXd;

enum class ColumnKind { numerical, categorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numerical;
  std::vector<std::string> categories;  // categorical only

  bool operator==(const Column&) const = default;
};

class Schema {
 public:
  Schema() = default;
  /// Throws Error("invalid_schema") when names are empty/duplicated or a
  /// categorical column has no (or duplicated) categories.
  explicit Schema(std::vector<Column> columns);

  const std::vector<Column>& columns() const noexcept { return columns_; }
  std::size_t size() const noexcept { return columns_.size(); }
  const Column& operator[](std::size_t i) const { return columns_.at(i); }

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t numerical_count() const;
  /// Number of encoded slots: one per numerical column plus one per category.
  std::size_t encoded_width() const;

  /// Index of `token` in the category list of column `col`; throws
  /// Error("unknown_category").
  int category_index(std::size_t col, std::string_view token) const;

  json to_json() const;
  static Schema from_json(const json& doc);
  static Schema load_json(const std::filesystem::path& path);

  /// Stable 16-hex-digit hash of names, kinds and categories.
  std::string fingerprint() const;

  bool operator==(const Schema&) const = default;

 private:
  std::vector<Column> columns_;
};

class Dataset {
 public:
  Dataset() = default;
  /// Validates arity, categorical ranges and finiteness.
  Dataset(Schema schema, Eigen::MatrixXd values);

  const Schema& schema() const noexcept { return schema_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }
  bool empty() const noexcept { return values_.rows() == 0; }

  Row row(Eigen::Index i) const { return values_.row(i).transpose(); }
  int category(Eigen::Index r, std::size_t c) const {
    return static_cast<int>(values_(r, static_cast<Eigen::Index>(c)));
  }

  Dataset select(std::span<const Eigen::Index> indices) const;

 private:
  Schema schema_;
  Eigen::MatrixXd values_;
};

/// Checks one row against a schema; throws Error("invalid_row").
void validate_row(const Schema& schema, const Row& row);

// ---------------------------------------------------------------------------
// CSV

struct CsvOptions {
  /// A column with at most this many distinct values is inferred categorical.
  std::size_t categorical_threshold = 10;
};

/// Loads an RFC-4180 CSV with a header row. With a schema, the header must
/// match it; without one, column kinds are inferred.
Dataset load_csv(const std::filesystem::path& path,
                 const std::optional<Schema>& schema = std::nullopt,
                 const CsvOptions& options = {});
Dataset parse_csv(std::istream& in, const std::optional<Schema>& schema = std::nullopt,
                  const CsvOptions& options = {});

void write_csv(std::ostream& out, const Dataset& data);
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Splits off a label column. Categorical labels map to their category
/// index, numerical labels are copied.
struct LabeledData {
  Dataset features;
  Eigen::VectorXd labels;
};
LabeledData split_label(const Dataset& data, std::string_view label_column);

// Row <-> JSON. Objects are keyed by column name; arrays follow column order.
// Categorical cells are category strings in both forms.
Row row_from_json(const Schema& schema, const json& doc);
json row_to_json(const Schema& schema, const Row& row);
json row_to_cells(const Schema& schema, const Row& row);

/// Numerical cells verbatim, categorical cells one-hot.
Eigen::MatrixXd plain_matrix(const Dataset& data);
Eigen::VectorXd plain_row(const Schema& schema, const Row& row);

// ---------------------------------------------------------------------------
// Reversible preprocessing

using EncodedMatrix = Eigen::MatrixXd;

struct TransformOptions {
  bool use_minmax = true;
  bool use_boxcox = true;
  /// Leave constant numerical columns untransformed instead of failing.
  bool passthrough_constant = false;
};

struct MinMax {
  double lo = 0.0;
  double hi = 1.0;
};

struct BoxCox {
  double lambda = 1.0;
  double shift = 0.0;
};

struct NumericTransform {
  std::optional<MinMax> minmax;
  std::optional<BoxCox> boxcox;
  double observed_min = 0.0;  // raw-scale clamp target for the inverse
};

struct OneHotBlock {
  int offset = 0;
  int width = 0;
};

struct TransformModel {
  Schema schema;
  TransformOptions options;
  /// Encoded offset of each schema column.
  std::vector<int> offsets;
  std::vector<std::optional<NumericTransform>> numeric;  // per column
  std::vector<std::optional<OneHotBlock>> one_hot;       // per column
  int width = 0;

  json to_json() const;
};

inline constexpr double kBoxCoxEpsilon = 1e-3;

double boxcox(double x, double lambda);
double boxcox_inverse(double y, double lambda);
/// Profile log-likelihood of the Box-Cox model for positive data.
double boxcox_log_likelihood(std::span<const double> x, double lambda);
/// Relative error amplification of the inverse at the given inputs:
/// max |boxcox(x, lambda)| / x^lambda.
double boxcox_condition(std::span<const double> x, double lambda);
inline constexpr double kBoxCoxMaxCondition = 1e4;
/// Maximizes the log-likelihood over {-5.0, -4.9, ..., 5.0}, skipping
/// lambdas whose condition exceeds kBoxCoxMaxCondition on `x`.
double fit_boxcox_lambda(std::span<const double> x);

TransformModel fit_transforms(const Dataset& data, const TransformOptions& options);
EncodedMatrix apply_transforms(const TransformModel& model, const Dataset& data);

struct InverseResult {
  Dataset data;
  std::size_t clamped = 0;  // cells whose Box-Cox inverse left its domain
};
InverseResult invert_transforms(const TransformModel& model, const EncodedMatrix& encoded);

/// Views an encoded matrix as a dataset over the same schema: numerical
/// slots are copied, one-hot blocks are decoded by argmax. Used to hand the
/// transformed locality to the generator.
Dataset encoded_to_dataset(const TransformModel& model, const EncodedMatrix& encoded);
EncodedMatrix dataset_to_encoded(const TransformModel& model, const Dataset& data);

// ---------------------------------------------------------------------------
// Locality

/// Mixed distance: Euclidean over z-scored numerical columns plus a 0/1
/// mismatch per categorical column. Statistics come from `data`.
std::vector<Eigen::Index> knn_indices(const Dataset& data, const Row& point, std::size_t k);
Dataset knn(const Dataset& data, const Row& point, std::size_t k);

}  // namespace lmte
