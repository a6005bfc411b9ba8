#include "lmte/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lmte/evalkit.hpp"
#include "util.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Config

SessionConfig SessionConfig::defaults(Task task) {
  SessionConfig c;
  c.lmt = LmtConfig::defaults(task);
  return c;
}

void SessionConfig::validate() const {
  if (k < 1) throw Error("invalid_config", "k must be >= 1");
  if (n_synthetic < 1) throw Error("invalid_config", "n_synthetic must be >= 1");
}

json SessionConfig::to_json() const {
  return json{{"k", k},
              {"n_synthetic", n_synthetic},
              {"transforms", {{"use_minmax", transforms.use_minmax}, {"use_boxcox", transforms.use_boxcox}}},
              {"gan", gan.to_json()},
              {"lmt", lmt.to_json()},
              {"probability_labels", probability_labels},
              {"seed", seed}};
}

SessionConfig SessionConfig::from_json(const json& doc, Task task) {
  if (!doc.is_object()) throw Error("invalid_config", "session config must be a JSON object");
  SessionConfig c = defaults(task);
  const auto k = doc.value("k", static_cast<long long>(c.k));
  const auto n = doc.value("n_synthetic", static_cast<long long>(c.n_synthetic));
  if (k < 1) throw Error("invalid_config", "k must be >= 1");
  if (n < 1) throw Error("invalid_config", "n_synthetic must be >= 1");
  c.k = static_cast<std::size_t>(k);
  c.n_synthetic = static_cast<std::size_t>(n);
  if (doc.contains("transforms")) {
    const auto& t = doc["transforms"];
    c.transforms.use_minmax = t.value("use_minmax", c.transforms.use_minmax);
    c.transforms.use_boxcox = t.value("use_boxcox", c.transforms.use_boxcox);
  }
  if (doc.contains("gan")) c.gan = CtganConfig::from_json(doc["gan"]);
  c.probability_labels = doc.value("probability_labels", false);
  if (c.probability_labels && task != Task::classification)
    throw Error("invalid_config", "probability_labels applies to classification oracles only");
  const Task tree_task = c.probability_labels ? Task::regression : task;
  c.lmt = LmtConfig::from_json(doc.value("lmt", json::object()), tree_task);
  c.seed = doc.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Neighborhood

json Provenance::to_json() const {
  return json{{"sampler", sampler},
              {"k", k},
              {"n", n},
              {"seed", seed},
              {"transforms", {{"use_minmax", transforms.use_minmax}, {"use_boxcox", transforms.use_boxcox}}},
              {"epochs", epochs},
              {"clamped", clamped},
              {"neighbor_rows", neighbor_rows}};
}

Provenance Provenance::from_json(const json& doc) {
  Provenance p;
  p.sampler = doc.value("sampler", p.sampler);
  p.k = doc.value("k", std::size_t{0});
  p.n = doc.value("n", std::size_t{0});
  p.seed = doc.value("seed", std::uint64_t{0});
  if (doc.contains("transforms")) {
    p.transforms.use_minmax = doc["transforms"].value("use_minmax", true);
    p.transforms.use_boxcox = doc["transforms"].value("use_boxcox", true);
  }
  p.epochs = doc.value("epochs", 0);
  p.clamped = doc.value("clamped", std::size_t{0});
  p.neighbor_rows = doc.value("neighbor_rows", std::vector<Eigen::Index>{});
  return p;
}

Eigen::VectorXd Neighborhood::targets(bool probability_labels) const {
  if (!probability_labels) return labels;
  if (!probs) throw Error("invalid_config", "probability labels need an oracle that reports probabilities");
  return *probs;
}

json Neighborhood::to_json() const {
  json rows_json = json::array();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) rows_json.push_back(row_to_cells(rows.schema(), rows.row(r)));
  json j{{"task", to_string(task)},
         {"schema", rows.schema().to_json()},
         {"rows", std::move(rows_json)},
         {"labels", std::vector<double>(labels.data(), labels.data() + labels.size())},
         {"provenance", provenance.to_json()}};
  if (probs) j["probs"] = std::vector<double>(probs->data(), probs->data() + probs->size());
  return j;
}

Neighborhood Neighborhood::from_json(const json& doc) {
  Neighborhood nb;
  nb.task = task_from_string(doc.at("task").get<std::string>());
  const Schema schema = Schema::from_json(doc.at("schema"));
  const auto& rows = doc.at("rows");
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    values.row(static_cast<Eigen::Index>(r)) = row_from_json(schema, rows[r]).transpose();
  nb.rows = Dataset(schema, std::move(values));
  const auto labels = doc.at("labels").get<std::vector<double>>();
  nb.labels = Eigen::Map<const Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  if (doc.contains("probs")) {
    const auto probs = doc["probs"].get<std::vector<double>>();
    nb.probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
  }
  nb.provenance = Provenance::from_json(doc.value("provenance", json::object()));
  if (nb.labels.size() != nb.rows.rows()) throw Error("invalid_neighborhood", "label count differs from row count");
  return nb;
}

Neighborhood generate_neighborhood(const Dataset& train, const Row& x_t, Oracle& oracle, const SessionConfig& config) {
  config.validate();
  if (train.empty()) throw Error("empty_dataset", "training data is empty");
  validate_row(train.schema(), x_t);

  const auto idx = knn_indices(train, x_t, config.k);
  const Dataset local = train.select(idx);
  TransformOptions topts = config.transforms;
  topts.passthrough_constant = true;
  const TransformModel transforms = fit_transforms(local, topts);
  const Dataset gan_rows = encoded_to_dataset(transforms, apply_transforms(transforms, local));

  CtganConfig gan = config.gan;
  gan.seed = detail::mix_seed(config.seed, 1);
  const CtganModel model = train_ctgan(gan_rows, gan);
  const Dataset synthetic = sample(model, config.n_synthetic, detail::mix_seed(config.seed, 2));
  InverseResult decoded = invert_transforms(transforms, dataset_to_encoded(transforms, synthetic));

  Neighborhood nb;
  nb.task = oracle.task();
  const Prediction pred = oracle.predict(decoded.data);
  nb.rows = std::move(decoded.data);
  nb.labels = pred.preds;
  nb.probs = pred.probs;
  nb.provenance.sampler = "ctgan";
  nb.provenance.k = config.k;
  nb.provenance.n = config.n_synthetic;
  nb.provenance.seed = config.seed;
  nb.provenance.transforms = config.transforms;
  nb.provenance.epochs = gan.epochs;
  nb.provenance.clamped = decoded.clamped;
  nb.provenance.neighbor_rows = idx;
  return nb;
}

// ---------------------------------------------------------------------------
// Explanations

json RankedAttribution::to_json() const {
  json j{{"feature", feature}, {"value", value}, {"coefficient", coefficient}};
  if (!category.empty()) j["category"] = category;
  return j;
}

double Explanation::linear_output() const {
  double s = intercept;
  for (const auto& a : attributions) s += a.value;
  return s;
}

std::vector<RankedAttribution> ranked_attributions(const Explanation& e) {
  std::vector<RankedAttribution> out;
  for (const auto& a : e.attributions) {
    const bool indicator = !a.category.empty();
    auto it = std::find_if(out.begin(), out.end(), [&](const RankedAttribution& r) { return r.feature == a.feature; });
    if (it == out.end()) {
      out.push_back({a.feature, {}, 0.0, 0.0});
      it = out.end() - 1;
    }
    it->value += a.value;
    if (!indicator || a.encoded_value != 0.0) {
      it->coefficient = a.coefficient;
      if (indicator) it->category = a.category;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedAttribution& a, const RankedAttribution& b) { return std::abs(a.value) > std::abs(b.value); });
  return out;
}

std::vector<RankedAttribution> top_attributions(const Explanation& e, std::size_t n) {
  if (n < 1) throw Error("invalid_argument", "top-n must be >= 1");
  auto all = ranked_attributions(e);
  if (all.size() > n) all.resize(n);
  return all;
}

Explanation explain_with_tree(const LinearModelTree& tree, const Row& x_t, bool probability_labels) {
  validate_row(tree.space.schema(), x_t);
  const Eigen::VectorXd enc = tree.space.encode_row(x_t);
  Explanation e;
  e.task = (tree.config.task == Task::classification || probability_labels) ? Task::classification : Task::regression;
  e.point = x_t;
  e.context = decision_path(tree, enc);
  e.leaf_id = e.context.leaf_id;
  const LeafModel& leaf = tree.leaf_model(e.leaf_id);
  e.intercept = leaf.intercept;
  const auto& features = tree.space.features();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    Attribution a;
    a.feature = f.name;
    if (f.kind == FeatureKind::indicator) a.category = f.category_name;
    a.index = i;
    a.encoded_value = enc(static_cast<Eigen::Index>(i));
    a.coefficient = leaf.weights(static_cast<Eigen::Index>(i));
    a.raw_coefficient = f.kind == FeatureKind::numerical ? a.coefficient / f.scale : a.coefficient;
    a.value = a.coefficient * a.encoded_value;
    e.attributions.push_back(std::move(a));
  }
  const double out = leaf.predict(enc);
  if (e.task == Task::regression) {
    e.surrogate_prediction = out;
  } else {
    const double p = std::clamp(out, 0.0, 1.0);
    e.surrogate_probability = p;
    e.surrogate_prediction = p >= 0.5 ? 1.0 : 0.0;
  }
  return e;
}

PointExplanation explain_point(const Row& x_t, const Neighborhood& nb, const LmtConfig& lmt_config,
                               const FeatureSpace& space, bool probability_labels,
                               std::optional<double> oracle_prediction) {
  const Task tree_task = probability_labels ? Task::regression : nb.task;
  if (lmt_config.task != tree_task)
    throw Error("task_mismatch", "surrogate task " + to_string(lmt_config.task) + " does not match the " +
                                     to_string(tree_task) + " targets of the neighborhood");
  if (probability_labels && nb.task != Task::classification)
    throw Error("invalid_config", "probability labels need a classification oracle");
  if (!(nb.rows.schema() == space.schema()))
    throw Error("schema_mismatch", "neighborhood schema differs from the feature space schema");
  const Eigen::VectorXd y = nb.targets(probability_labels);
  const Eigen::MatrixXd X = space.encode(nb.rows);

  PointExplanation out;
  try {
    out.tree = fit_lmt(X, y, lmt_config, space);
  } catch (const Error& err) {
    if (err.code() == "too_few_rows")
      throw Error("config_error", std::string(err.what()) + " (raise n_synthetic above " +
                                      std::to_string(nb.rows.rows()) + ")");
    throw;
  }
  out.explanation = explain_with_tree(out.tree, x_t, probability_labels);
  out.explanation.oracle_prediction = oracle_prediction;

  const Eigen::VectorXd fitted = predict_rows(out.tree, X);
  if (out.explanation.task == Task::classification) {
    const Eigen::VectorXd cls = (fitted.array() >= 0.5).cast<double>();
    out.explanation.fidelity = fidelity_classification(cls, nb.labels);
  } else {
    try {
      out.explanation.fidelity = fidelity_regression(fitted, nb.labels);
    } catch (const Error&) {
      out.explanation.fidelity.reset();  // constant oracle on the locality
    }
  }
  return out;
}

Row apply_overrides(const Schema& schema, const Row& x_t, const json& overrides) {
  validate_row(schema, x_t);
  Row row = x_t;
  if (overrides.is_null()) return row;
  if (!overrides.is_object()) throw Error("invalid_overrides", "overrides must be a JSON object");
  for (const auto& [name, value] : overrides.items()) {
    const auto idx = schema.index_of(name);
    if (!idx) throw Error("unknown_feature", "no feature named '" + name + "'");
    const auto& col = schema[*idx];
    if (col.kind == ColumnKind::categorical) {
      if (!value.is_string())
        throw Error("unknown_category", "override for '" + name + "' must be one of its category names");
      row(static_cast<Eigen::Index>(*idx)) = schema.category_index(*idx, value.get<std::string>());
    } else {
      if (!value.is_number() || !std::isfinite(value.get<double>()))
        throw Error("invalid_overrides", "override for '" + name + "' must be a finite number");
      row(static_cast<Eigen::Index>(*idx)) = value.get<double>();
    }
  }
  return row;
}

Explanation what_if(const LinearModelTree& tree, const Row& x_t, const json& overrides, bool probability_labels) {
  const int before = tree.leaf_for(tree.space.encode_row(x_t));
  Explanation e = explain_with_tree(tree, apply_overrides(tree.space.schema(), x_t, overrides), probability_labels);
  e.leaf_changed = e.leaf_id != before;
  return e;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string fixed(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

json Explanation::to_json(const Schema& schema, std::size_t top_k) const {
  json prediction{{"surrogate", surrogate_prediction}};
  if (surrogate_probability) prediction["surrogate_probability"] = *surrogate_probability;
  prediction["oracle"] = oracle_prediction ? json(*oracle_prediction) : json(nullptr);

  json attrs = json::array();
  for (const auto& a : attributions) {
    json j{{"feature", a.feature},           {"index", a.index},
           {"encoded_value", a.encoded_value}, {"coefficient", a.coefficient},
           {"raw_coefficient", a.raw_coefficient}, {"value", a.value}};
    if (!a.category.empty()) j["category"] = a.category;
    attrs.push_back(std::move(j));
  }
  json top = json::array();
  for (const auto& r : top_attributions(*this, std::max<std::size_t>(top_k, 1))) top.push_back(r.to_json());

  json j{{"task", to_string(task)},
         {"point", row_to_json(schema, point)},
         {"prediction", std::move(prediction)},
         {"context", context.to_json()},
         {"leaf_id", leaf_id},
         {"intercept", intercept},
         {"linear_output", linear_output()},
         {"attributions", std::move(attrs)},
         {"top_attributions", std::move(top)},
         {"fidelity", fidelity ? json(*fidelity) : json(nullptr)}};
  if (leaf_changed) j["leaf_changed"] = *leaf_changed;
  return j;
}

std::string Explanation::to_text(const Schema& schema, std::size_t top_k) const {
  std::ostringstream out;
  out << "point: " << row_to_json(schema, point).dump() << "\n";
  out << "surrogate prediction: " << detail::format_double(surrogate_prediction);
  if (surrogate_probability) out << " (p=" << fixed(*surrogate_probability) << ")";
  out << "\n";
  if (oracle_prediction) out << "oracle prediction: " << detail::format_double(*oracle_prediction) << "\n";
  if (fidelity) out << "fidelity on neighborhood: " << fixed(*fidelity) << "\n";
  if (leaf_changed) out << "leaf changed: " << (*leaf_changed ? "yes" : "no") << "\n";
  out << "context (leaf " << leaf_id << "):\n";
  if (context.conditions.empty()) out << "  (always)\n";
  for (const auto& c : context.conditions) out << "  " << c.to_string() << "\n";

  const auto top = top_attributions(*this, std::max<std::size_t>(top_k, 1));
  std::vector<std::string> names;
  std::size_t width = 7;
  for (const auto& r : top) {
    names.push_back(r.category.empty() ? r.feature : r.feature + "=" + r.category);
    width = std::max(width, names.back().size());
  }
  out << "top " << top.size() << " attributions:\n";
  out << "  " << std::string("feature") << std::string(width - 7 + 2, ' ') << "     value  coefficient\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%10.4f  %11.4f", top[i].value, top[i].coefficient);
    out << "  " << names[i] << std::string(width - names[i].size() + 2, ' ') << buf << "\n";
  }
  out << "intercept: " << fixed(intercept) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Sessions

json FittedSession::to_json() const {
  return json{{"format", "lmte-session/1"},
              {"config", config.to_json()},
              {"point", row_to_json(schema(), point)},
              {"neighborhood", neighborhood.to_json()},
              {"tree", tree.to_json()},
              {"oracle_prediction", explanation.oracle_prediction ? json(*explanation.oracle_prediction) : json(nullptr)},
              {"fidelity", explanation.fidelity ? json(*explanation.fidelity) : json(nullptr)}};
}

FittedSession FittedSession::from_json(const json& doc) {
  if (doc.value("format", std::string()) != "lmte-session/1")
    throw Error("invalid_session", "not an lmte session document");
  FittedSession s;
  s.tree = LinearModelTree::from_json(doc.at("tree"));
  s.space = s.tree.space;
  s.neighborhood = Neighborhood::from_json(doc.at("neighborhood"));
  s.config = SessionConfig::from_json(doc.at("config"), s.neighborhood.task);
  s.point = row_from_json(s.space.schema(), doc.at("point"));
  s.explanation = explain_with_tree(s.tree, s.point, s.config.probability_labels);
  if (doc.contains("oracle_prediction") && !doc["oracle_prediction"].is_null())
    s.explanation.oracle_prediction = doc["oracle_prediction"].get<double>();
  if (doc.contains("fidelity") && !doc["fidelity"].is_null()) s.explanation.fidelity = doc["fidelity"].get<double>();
  return s;
}

FittedSession fit_session(const Dataset& train, const Row& x_t, Oracle& oracle, const SessionConfig& config) {
  FittedSession s;
  s.config = config;
  s.space = FeatureSpace::fit(train);
  s.point = x_t;
  s.neighborhood = generate_neighborhood(train, x_t, oracle, config);
  Eigen::MatrixXd one(1, x_t.size());
  one.row(0) = x_t.transpose();
  const Prediction own = oracle.predict(Dataset(train.schema(), one));
  auto fitted = explain_point(x_t, s.neighborhood, config.lmt, s.space, config.probability_labels, own.preds(0));
  s.tree = std::move(fitted.tree);
  s.explanation = std::move(fitted.explanation);
  return s;
}

}  // namespace lmte
