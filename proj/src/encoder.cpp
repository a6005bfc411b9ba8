#include "lmte/encoder.hpp"

#include <cmath>

#include "util.hpp"

namespace lmte {

FeatureSpace::FeatureSpace(Schema schema, std::vector<EncodedFeature> features)
    : schema_(std::move(schema)), features_(std::move(features)) {
  for (const auto& f : features_) {
    if (f.column >= schema_.size())
      throw Error("invalid_feature_space", "feature '" + f.name + "' references a missing column");
    if (!(f.scale > 0.0) || !std::isfinite(f.center))
      throw Error("invalid_feature_space", "feature '" + f.name + "' has a non-positive scale");
  }
}

FeatureSpace FeatureSpace::fit(const Dataset& background) {
  if (background.empty()) throw Error("empty_dataset", "feature space needs background rows");
  const auto& schema = background.schema();
  std::vector<EncodedFeature> features;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& col = schema[c];
    if (col.kind == ColumnKind::numerical) {
      const auto v = background.values().col(static_cast<Eigen::Index>(c));
      const double mean = v.mean();
      const double var = (v.array() - mean).square().mean();
      features.push_back({col.name, c, FeatureKind::numerical, -1, {}, mean, var > 0.0 ? std::sqrt(var) : 1.0});
    } else {
      for (std::size_t k = 0; k < col.categories.size(); ++k)
        features.push_back({col.name, c, FeatureKind::indicator, static_cast<int>(k), col.categories[k], 0.0, 1.0});
    }
  }
  return FeatureSpace(schema, std::move(features));
}

FeatureSpace FeatureSpace::identity(std::size_t width) {
  std::vector<Column> cols;
  std::vector<EncodedFeature> features;
  for (std::size_t j = 0; j < width; ++j) {
    cols.push_back({"x" + std::to_string(j), ColumnKind::numerical, {}});
    features.push_back({"x" + std::to_string(j), j, FeatureKind::numerical, -1, {}, 0.0, 1.0});
  }
  return FeatureSpace(Schema(std::move(cols)), std::move(features));
}

double FeatureSpace::encode_value(std::size_t feature, double raw) const {
  const auto& f = features_.at(feature);
  if (f.kind == FeatureKind::indicator) return static_cast<int>(raw) == f.category ? 1.0 : 0.0;
  return (raw - f.center) / f.scale;
}

double FeatureSpace::decode_value(std::size_t feature, double encoded) const {
  const auto& f = features_.at(feature);
  return f.center + f.scale * encoded;
}

Eigen::VectorXd FeatureSpace::encode_row(const Row& row) const {
  if (static_cast<std::size_t>(row.size()) != schema_.size())
    throw Error("width_mismatch", "row has " + std::to_string(row.size()) + " cells, feature space expects " +
                                      std::to_string(schema_.size()));
  Eigen::VectorXd out(static_cast<Eigen::Index>(features_.size()));
  for (std::size_t j = 0; j < features_.size(); ++j)
    out(static_cast<Eigen::Index>(j)) = encode_value(j, row(static_cast<Eigen::Index>(features_[j].column)));
  return out;
}

Eigen::MatrixXd FeatureSpace::encode(const Dataset& data) const {
  Eigen::MatrixXd out(data.rows(), static_cast<Eigen::Index>(features_.size()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) out.row(r) = encode_row(data.row(r)).transpose();
  return out;
}

json FeatureSpace::to_json() const {
  json feats = json::array();
  for (const auto& f : features_) {
    json j{{"name", f.name}, {"column", f.column}};
    if (f.kind == FeatureKind::numerical) {
      j["kind"] = "numerical";
      j["center"] = f.center;
      j["scale"] = f.scale;
    } else {
      j["kind"] = "indicator";
      j["category"] = f.category;
      j["category_name"] = f.category_name;
    }
    feats.push_back(std::move(j));
  }
  return json{{"schema", schema_.to_json()}, {"features", std::move(feats)}};
}

FeatureSpace FeatureSpace::from_json(const json& doc) {
  Schema schema = Schema::from_json(doc.at("schema"));
  std::vector<EncodedFeature> features;
  for (const auto& j : doc.at("features")) {
    EncodedFeature f;
    f.name = j.at("name").get<std::string>();
    f.column = j.at("column").get<std::size_t>();
    if (j.at("kind").get<std::string>() == "indicator") {
      f.kind = FeatureKind::indicator;
      f.category = j.at("category").get<int>();
      f.category_name = j.at("category_name").get<std::string>();
    } else {
      f.center = j.at("center").get<double>();
      f.scale = j.at("scale").get<double>();
    }
    features.push_back(std::move(f));
  }
  return FeatureSpace(std::move(schema), std::move(features));
}

std::string FeatureSpace::fingerprint() const {
  std::string canon = schema_.fingerprint();
  for (const auto& f : features_) {
    canon += "|" + f.name + ":" + std::to_string(f.column) + ":" +
             (f.kind == FeatureKind::numerical ? "n" : "i" + std::to_string(f.category));
  }
  return detail::hex64(detail::fnv1a(canon));
}

}  // namespace lmte
