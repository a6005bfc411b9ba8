#include <algorithm>
#include <cmath>
#include <numeric>

#include "lmte/evalkit.hpp"

namespace lmte {

double fidelity_classification(const Eigen::VectorXd& surrogate, const Eigen::VectorXd& oracle) {
  if (surrogate.size() == 0) throw Error("empty_input", "fidelity needs at least one prediction");
  if (surrogate.size() != oracle.size()) throw Error("dimension_mismatch", "prediction vectors differ in length");
  Eigen::Index agree = 0;
  for (Eigen::Index i = 0; i < surrogate.size(); ++i) agree += surrogate(i) == oracle(i);
  return static_cast<double>(agree) / static_cast<double>(surrogate.size());
}

double fidelity_regression(const Eigen::VectorXd& surrogate, const Eigen::VectorXd& oracle) {
  if (surrogate.size() < 2) throw Error("empty_input", "standardized RMSE needs at least two predictions");
  if (surrogate.size() != oracle.size()) throw Error("dimension_mismatch", "prediction vectors differ in length");
  const double mean = oracle.mean();
  const double sd = std::sqrt((oracle.array() - mean).square().mean());
  if (!(sd > 0.0)) throw Error("degenerate_target", "oracle predictions are constant; standardized RMSE undefined");
  const double rmse = std::sqrt((surrogate - oracle).array().square().mean());
  return rmse / sd;
}

Eigen::VectorXd exponential_kernel_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& center, double width) {
  if (center.size() != X.cols()) throw Error("dimension_mismatch", "kernel center width differs from X");
  if (!(width > 0.0)) width = 0.75 * std::sqrt(static_cast<double>(X.cols()));
  const Eigen::VectorXd d2 = (X.rowwise() - center.transpose()).rowwise().squaredNorm();
  return (-d2.array() / (width * width)).exp().matrix();
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("empty_input", "median of an empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

TrainStats TrainStats::from(const Dataset& train) {
  if (train.empty()) throw Error("empty_dataset", "training statistics need rows");
  TrainStats s;
  s.schema = train.schema();
  const auto d = static_cast<Eigen::Index>(s.schema.size());
  s.mean = Eigen::VectorXd::Zero(d);
  s.stdev = Eigen::VectorXd::Zero(d);
  s.frequencies.resize(s.schema.size());
  for (std::size_t c = 0; c < s.schema.size(); ++c) {
    const auto col = train.values().col(static_cast<Eigen::Index>(c));
    if (s.schema[c].kind == ColumnKind::numerical) {
      s.mean(static_cast<Eigen::Index>(c)) = col.mean();
      s.stdev(static_cast<Eigen::Index>(c)) = std::sqrt((col.array() - col.mean()).square().mean());
    } else {
      auto& f = s.frequencies[c];
      f.assign(s.schema[c].categories.size(), 0.0);
      for (Eigen::Index r = 0; r < col.size(); ++r) f[static_cast<std::size_t>(col(r))] += 1.0;
      for (auto& v : f) v /= static_cast<double>(col.size());
    }
  }
  return s;
}

Dataset urs_sample(const TrainStats& stats, const Row& x_t, std::size_t n, std::uint64_t seed) {
  validate_row(stats.schema, x_t);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), x_t.size());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < stats.schema.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (stats.schema[c].kind == ColumnKind::numerical) {
        out(r, ci) = x_t(ci) + normal(rng) * stats.stdev(ci);
      } else {
        const auto& f = stats.frequencies[c];
        std::discrete_distribution<int> pick(f.begin(), f.end());
        out(r, ci) = pick(rng);
      }
    }
  }
  return Dataset(stats.schema, std::move(out));
}

CoveragePrecision coverage_precision(const RuleConjunction& context, const LeafModel& leaf, const FeatureSpace& space,
                                     const Dataset& rows, const Eigen::VectorXd& oracle_labels) {
  if (rows.rows() != oracle_labels.size()) throw Error("dimension_mismatch", "one oracle label per row required");
  CoveragePrecision cp;
  if (rows.empty()) return cp;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const Row row = rows.row(r);
    if (!context.holds(row)) continue;
    ++cp.covered;
    const double cls = leaf.predict(space.encode_row(row)) >= 0.5 ? 1.0 : 0.0;
    correct += cls == oracle_labels(r);
  }
  cp.coverage = static_cast<double>(cp.covered) / static_cast<double>(rows.rows());
  if (cp.covered > 0) cp.precision = static_cast<double>(correct) / static_cast<double>(cp.covered);
  return cp;
}

CoveragePrecision coverage_precision(const RuleConjunction& context, const LeafModel& leaf, const FeatureSpace& space,
                                     const Dataset& rows, Oracle& oracle) {
  return coverage_precision(context, leaf, space, rows, oracle.predict(rows).preds);
}

double recall_faithfulness(const std::vector<RankedAttribution>& ranked, const std::set<std::string>& true_features) {
  if (true_features.empty()) throw Error("empty_input", "recall needs at least one true feature");
  if (ranked.empty()) throw Error("empty_input", "recall needs a non-empty attribution list");
  std::vector<std::size_t> order(ranked.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(ranked[a].value) > std::abs(ranked[b].value);
  });
  const std::size_t top = (ranked.size() + 1) / 2;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top; ++i) hits += true_features.count(ranked[order[i]].feature);
  return static_cast<double>(hits) / static_cast<double>(true_features.size());
}

}  // namespace lmte
