#include <algorithm>
#include <cmath>

#include "lmte/lmt.hpp"

namespace lmte {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

void check_shapes(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd* w) {
  if (X.rows() == 0) throw Error("empty_input", "leaf model needs at least one row");
  if (X.rows() != y.size())
    throw Error("dimension_mismatch", "X has " + std::to_string(X.rows()) + " rows, y has " +
                                          std::to_string(y.size()));
  if (w && w->size() != y.size())
    throw Error("dimension_mismatch", "sample weights length differs from y");
}

}  // namespace

double LeafModel::linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != weights.size())
    throw Error("width_mismatch", "point width " + std::to_string(x.size()) + " != model width " +
                                      std::to_string(weights.size()));
  return weights.dot(x) + intercept;
}

double LeafModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double z = linear_predictor(x);
  if (kind == LeafKind::ridge) return z;
  return std::clamp(sigmoid(z), kProbabilityClip, 1.0 - kProbabilityClip);
}

Eigen::VectorXd LeafModel::predict_rows(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(X.row(i).transpose());
  return out;
}

json LeafModel::to_json() const {
  return json{{"kind", kind == LeafKind::ridge ? "ridge" : "logistic"},
              {"weights", std::vector<double>(weights.data(), weights.data() + weights.size())},
              {"intercept", intercept},
              {"loss", loss}};
}

LeafModel LeafModel::from_json(const json& doc) {
  LeafModel m;
  m.kind = doc.at("kind").get<std::string>() == "logistic" ? LeafKind::logistic : LeafKind::ridge;
  const auto w = doc.at("weights").get<std::vector<double>>();
  m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  m.intercept = doc.at("intercept").get<double>();
  m.loss = doc.at("loss").get<double>();
  return m;
}

LeafModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double reg,
                    const Eigen::VectorXd* sample_weights) {
  check_shapes(X, y, sample_weights);
  if (reg < 0.0) throw Error("invalid_regularization", "ridge regularization must be >= 0");
  const Eigen::Index p = X.cols();
  Eigen::VectorXd s = sample_weights ? *sample_weights : Eigen::VectorXd::Ones(y.size());
  const double total = s.sum();
  if (!(total > 0.0)) throw Error("invalid_weights", "sample weights sum to zero");

  const Eigen::RowVectorXd x_mean = (s.asDiagonal() * X).colwise().sum() / total;
  const double y_mean = s.dot(y) / total;
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  LeafModel m;
  m.kind = LeafKind::ridge;
  m.weights = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    Eigen::MatrixXd A = Xc.transpose() * s.asDiagonal() * Xc;
    const Eigen::VectorXd rhs = Xc.transpose() * (s.array() * yc.array()).matrix();
    double lambda = reg;
    if (lambda == 0.0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
      if (qr.rank() < p) lambda = 1e-8;
    }
    A.diagonal().array() += lambda;
    m.weights = A.ldlt().solve(rhs);
  }
  m.intercept = y_mean - x_mean.dot(m.weights);
  const Eigen::VectorXd resid = (X * m.weights).array() + m.intercept - y.array();
  m.loss = s.dot(resid.cwiseAbs2());
  return m;
}

LeafModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double reg,
                       const LogisticOptions& options, const LeafModel* warm_start,
                       const Eigen::VectorXd* sample_weights) {
  check_shapes(X, y, sample_weights);
  if (reg < 0.0) throw Error("invalid_regularization", "logistic regularization must be >= 0");
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any())
    throw Error("invalid_labels", "logistic labels must lie in [0, 1]");
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  const Eigen::VectorXd s = sample_weights ? *sample_weights : Eigen::VectorXd::Ones(n);
  const double total = s.sum();
  if (!(total > 0.0)) throw Error("invalid_weights", "sample weights sum to zero");

  LeafModel m;
  m.kind = LeafKind::logistic;
  m.weights = Eigen::VectorXd::Zero(p);

  bool all_one = true, all_zero = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s(i) <= 0.0) continue;
    if (y(i) != 1.0) all_one = false;
    if (y(i) != 0.0) all_zero = false;
  }
  if (all_one || all_zero) {
    const double prob = all_one ? 1.0 - kProbabilityClip : kProbabilityClip;
    m.intercept = logit(prob);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      loss += s(i) * -(y(i) * std::log(prob) + (1.0 - y(i)) * std::log1p(-prob));
    m.loss = loss;
    return m;
  }

  auto objective = [&](const Eigen::VectorXd& w, double b) {
    const Eigen::VectorXd z = (X * w).array() + b;
    double j = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) j += s(i) * (softplus(z(i)) - y(i) * z(i));
    return j + 0.5 * reg * w.squaredNorm();
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double b = 0.0;
  if (warm_start && warm_start->kind == LeafKind::logistic && warm_start->weights.size() == p) {
    w = warm_start->weights;
    b = warm_start->intercept;
  } else {
    const double ybar = std::clamp(s.dot(y) / total, 1e-3, 1.0 - 1e-3);
    b = logit(ybar);
  }

  double current = objective(w, b);
  Eigen::MatrixXd H(p + 1, p + 1);
  Eigen::VectorXd g(p + 1);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd z = (X * w).array() + b;
    Eigen::VectorXd r(n), d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = sigmoid(z(i));
      r(i) = s(i) * (pi - y(i));
      d(i) = s(i) * pi * (1.0 - pi);
    }
    g.head(p) = X.transpose() * r + reg * w;
    g(p) = r.sum();
    if (g.norm() / total <= options.gradient_tolerance) break;

    const Eigen::MatrixXd Xd = d.cwiseSqrt().asDiagonal() * X;
    H.topLeftCorner(p, p) = Xd.transpose() * Xd;
    H.topLeftCorner(p, p).diagonal().array() += reg;
    const Eigen::VectorXd cross = X.transpose() * d;
    H.block(0, p, p, 1) = cross;
    H.block(p, 0, 1, p) = cross.transpose();
    H(p, p) = d.sum() + 1e-10;

    const Eigen::VectorXd step = -H.ldlt().solve(g);
    const double slope = g.dot(step);
    if (!(slope < 0.0)) break;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd w_new = w + t * step.head(p);
      const double b_new = b + t * step(p);
      const double trial = objective(w_new, b_new);
      if (trial <= current + 1e-4 * t * slope) {
        w = w_new;
        b = b_new;
        current = trial;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  m.weights = w;
  m.intercept = b;
  m.loss = current;
  return m;
}

}  // namespace lmte
