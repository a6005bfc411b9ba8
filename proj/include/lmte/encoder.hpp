#pragma once

#include <string>
#include <vector>

#include "lmte/tabular.hpp"

namespace lmte {

enum class FeatureKind { numerical, indicator };

/// One column of the surrogate's input space. Numerical features are
/// (x - center) / scale; indicators are the 0/1 one-hot slot for `category`.
struct EncodedFeature {
  std::string name;        // source column name
  std::size_t column = 0;  // source column index
  FeatureKind kind = FeatureKind::numerical;
  int category = -1;
  std::string category_name;
  double center = 0.0;
  double scale = 1.0;

  bool operator==(const EncodedFeature&) const = default;
};

/// Maps raw rows to the matrix the linear model tree is fitted on, and
/// keeps enough metadata to render thresholds back in raw units.
class FeatureSpace {
 public:
  FeatureSpace() = default;
  FeatureSpace(Schema schema, std::vector<EncodedFeature> features);

  /// Z-scores numerical columns with statistics of `background`
  /// (population stdev; zero-variance columns keep scale 1).
  static FeatureSpace fit(const Dataset& background);
  /// Plain numerical space x0..x{width-1}; for matrices without a schema.
  static FeatureSpace identity(std::size_t width);

  const Schema& schema() const noexcept { return schema_; }
  const std::vector<EncodedFeature>& features() const noexcept { return features_; }
  std::size_t width() const noexcept { return features_.size(); }

  Eigen::VectorXd encode_row(const Row& row) const;
  Eigen::MatrixXd encode(const Dataset& data) const;
  double encode_value(std::size_t feature, double raw) const;
  double decode_value(std::size_t feature, double encoded) const;

  json to_json() const;
  static FeatureSpace from_json(const json& doc);
  std::string fingerprint() const;

  bool operator==(const FeatureSpace&) const = default;

 private:
  Schema schema_;
  std::vector<EncodedFeature> features_;
};

}  // namespace lmte
