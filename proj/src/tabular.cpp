#include "lmte/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "util.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Schema

Schema::Schema(std::vector<Column> columns) : columns_(std::move(columns)) {
  std::unordered_set<std::string> names;
  for (const auto& c : columns_) {
    if (c.name.empty()) throw Error("invalid_schema", "column name must be non-empty");
    if (!names.insert(c.name).second)
      throw Error("invalid_schema", "duplicate column name '" + c.name + "'");
    if (c.kind == ColumnKind::categorical) {
      if (c.categories.empty())
        throw Error("invalid_schema", "categorical column '" + c.name + "' has no categories");
      std::unordered_set<std::string> cats(c.categories.begin(), c.categories.end());
      if (cats.size() != c.categories.size())
        throw Error("invalid_schema", "categorical column '" + c.name + "' repeats a category");
    } else if (!c.categories.empty()) {
      throw Error("invalid_schema", "numerical column '" + c.name + "' lists categories");
    }
  }
}

std::optional<std::size_t> Schema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Schema::numerical_count() const {
  return static_cast<std::size_t>(std::count_if(columns_.begin(), columns_.end(), [](const Column& c) {
    return c.kind == ColumnKind::numerical;
  }));
}

std::size_t Schema::encoded_width() const {
  std::size_t w = 0;
  for (const auto& c : columns_) w += c.kind == ColumnKind::numerical ? 1 : c.categories.size();
  return w;
}

int Schema::category_index(std::size_t col, std::string_view token) const {
  const auto& c = columns_.at(col);
  for (std::size_t i = 0; i < c.categories.size(); ++i)
    if (c.categories[i] == token) return static_cast<int>(i);
  throw Error("unknown_category",
              "unknown category '" + std::string(token) + "' for column '" + c.name + "'");
}

json Schema::to_json() const {
  json cols = json::array();
  for (const auto& c : columns_) {
    json j{{"name", c.name}, {"kind", c.kind == ColumnKind::numerical ? "numerical" : "categorical"}};
    if (c.kind == ColumnKind::categorical) j["categories"] = c.categories;
    cols.push_back(std::move(j));
  }
  return json{{"columns", std::move(cols)}};
}

Schema Schema::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("columns") || !doc["columns"].is_array())
    throw Error("invalid_schema", "schema document needs a \"columns\" array");
  std::vector<Column> cols;
  for (const auto& j : doc["columns"]) {
    Column c;
    c.name = j.at("name").get<std::string>();
    const auto kind = j.value("kind", std::string("numerical"));
    if (kind == "numerical" || kind == "numeric") {
      c.kind = ColumnKind::numerical;
    } else if (kind == "categorical") {
      c.kind = ColumnKind::categorical;
      for (const auto& cat : j.at("categories")) {
        c.categories.push_back(cat.is_string() ? cat.get<std::string>() : cat.dump());
      }
    } else {
      throw Error("invalid_schema", "unknown column kind '" + kind + "'");
    }
    cols.push_back(std::move(c));
  }
  return Schema(std::move(cols));
}

Schema Schema::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open schema file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error("invalid_schema", path.string() + ": " + e.what());
  }
}

std::string Schema::fingerprint() const {
  std::string canon;
  for (const auto& c : columns_) {
    canon += c.name;
    canon += c.kind == ColumnKind::numerical ? "|n" : "|c";
    for (const auto& cat : c.categories) canon += "|" + cat;
    canon += ";";
  }
  return detail::hex64(detail::fnv1a(canon));
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

void check_cells(const Schema& schema, const Eigen::Ref<const Eigen::RowVectorXd>& row,
                 Eigen::Index line) {
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const double v = row(static_cast<Eigen::Index>(c));
    const auto& col = schema[c];
    if (!std::isfinite(v))
      throw Error("invalid_row", "row " + std::to_string(line) + ": non-finite value in '" +
                                     col.name + "'");
    if (col.kind == ColumnKind::categorical) {
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(col.categories.size()))
        throw Error("invalid_row", "row " + std::to_string(line) + ": category index " +
                                       detail::format_double(v) + " out of range for '" +
                                       col.name + "'");
    }
  }
}

}  // namespace

Dataset::Dataset(Schema schema, Eigen::MatrixXd values)
    : schema_(std::move(schema)), values_(std::move(values)) {
  if (values_.rows() > 0 && static_cast<std::size_t>(values_.cols()) != schema_.size())
    throw Error("invalid_row", "dataset has " + std::to_string(values_.cols()) +
                                   " columns, schema has " + std::to_string(schema_.size()));
  if (values_.rows() == 0) values_.resize(0, static_cast<Eigen::Index>(schema_.size()));
  for (Eigen::Index r = 0; r < values_.rows(); ++r) check_cells(schema_, values_.row(r), r);
}

Dataset Dataset::select(std::span<const Eigen::Index> indices) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), values_.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values_.row(indices[i]);
  return Dataset(schema_, std::move(out));
}

void validate_row(const Schema& schema, const Row& row) {
  if (static_cast<std::size_t>(row.size()) != schema.size())
    throw Error("invalid_row", "row has " + std::to_string(row.size()) + " cells, schema has " +
                                   std::to_string(schema.size()));
  check_cells(schema, row.transpose(), 0);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

// Returns false at end of input. Handles quoted fields, doubled quotes and
// CRLF line endings; quoted fields may span lines.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char ch;
  while (in.get(ch)) {
    any = true;
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (ch != '\r') {
      field += ch;
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_number(std::string_view token) {
  if (token.empty()) return std::nullopt;
  if (token.front() == '+') token.remove_prefix(1);
  double v = 0.0;
  const auto* end = token.data() + token.size();
  const auto res = std::from_chars(token.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Dataset parse_csv(std::istream& in, const std::optional<Schema>& schema, const CsvOptions& options) {
  std::vector<std::string> header;
  if (!read_record(in, header)) throw Error("empty_csv", "CSV has no header row");
  for (auto& h : header) h = trim(h);

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> fields;
  std::size_t line = 1;
  while (read_record(in, fields)) {
    ++line;
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
    if (fields.size() != header.size())
      throw Error("ragged_row", "line " + std::to_string(line) + ": expected " +
                                    std::to_string(header.size()) + " fields, found " +
                                    std::to_string(fields.size()));
    for (auto& f : fields) f = trim(f);
    cells.push_back(fields);
  }

  Schema resolved;
  if (schema) {
    if (schema->size() != header.size())
      throw Error("header_mismatch", "CSV header has " + std::to_string(header.size()) +
                                         " columns, schema has " + std::to_string(schema->size()));
    for (std::size_t c = 0; c < header.size(); ++c)
      if ((*schema)[c].name != header[c])
        throw Error("header_mismatch", "CSV column " + std::to_string(c) + " is '" + header[c] +
                                           "', schema expects '" + (*schema)[c].name + "'");
    resolved = *schema;
  } else {
    std::vector<Column> cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
      Column col;
      col.name = header[c];
      bool all_numeric = true;
      std::set<std::string> distinct;
      for (const auto& row : cells) {
        distinct.insert(row[c]);
        if (!parse_number(row[c])) all_numeric = false;
      }
      if (!all_numeric || distinct.size() <= options.categorical_threshold) {
        col.kind = ColumnKind::categorical;
        col.categories.assign(distinct.begin(), distinct.end());
        if (all_numeric) {
          std::stable_sort(col.categories.begin(), col.categories.end(),
                           [](const std::string& a, const std::string& b) {
                             return *parse_number(a) < *parse_number(b);
                           });
        }
      }
      cols.push_back(std::move(col));
    }
    resolved = Schema(std::move(cols));
  }

  Eigen::MatrixXd values(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(header.size()));
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto& tok = cells[r][c];
      double v = 0.0;
      if (resolved[c].kind == ColumnKind::numerical) {
        const auto parsed = parse_number(tok);
        if (!parsed)
          throw Error("bad_number", "line " + std::to_string(r + 2) + ": cannot parse '" + tok +
                                        "' in numerical column '" + resolved[c].name + "'");
        v = *parsed;
      } else {
        try {
          v = resolved.category_index(c, tok);
        } catch (const Error& e) {
          throw Error(e.code(), "line " + std::to_string(r + 2) + ": " + e.what());
        }
      }
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return Dataset(std::move(resolved), std::move(values));
}

Dataset load_csv(const std::filesystem::path& path, const std::optional<Schema>& schema,
                 const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_file", "cannot open CSV file " + path.string());
  return parse_csv(in, schema, options);
}

void write_csv(std::ostream& out, const Dataset& data) {
  const auto& schema = data.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) out << (c ? "," : "") << quote_field(schema[c].name);
  out << "\n";
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c) out << ",";
      if (schema[c].kind == ColumnKind::categorical)
        out << quote_field(schema[c].categories[static_cast<std::size_t>(data.category(r, c))]);
      else
        out << detail::format_double(data.values()(r, static_cast<Eigen::Index>(c)));
    }
    out << "\n";
  }
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  write_csv(out, data);
}

LabeledData split_label(const Dataset& data, std::string_view label_column) {
  const auto idx = data.schema().index_of(label_column);
  if (!idx) throw Error("unknown_column", "no label column '" + std::string(label_column) + "'");
  std::vector<Column> cols;
  std::vector<Eigen::Index> keep;
  for (std::size_t c = 0; c < data.schema().size(); ++c) {
    if (c == *idx) continue;
    cols.push_back(data.schema()[c]);
    keep.push_back(static_cast<Eigen::Index>(c));
  }
  Eigen::MatrixXd values(data.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) values.col(static_cast<Eigen::Index>(j)) = data.values().col(keep[j]);
  return {Dataset(Schema(std::move(cols)), std::move(values)),
          data.values().col(static_cast<Eigen::Index>(*idx))};
}

// ---------------------------------------------------------------------------
// Row <-> JSON

Row row_from_json(const Schema& schema, const json& doc) {
  Row row(static_cast<Eigen::Index>(schema.size()));
  auto cell = [&](std::size_t c, const json& v) {
    const auto& col = schema[c];
    if (col.kind == ColumnKind::categorical) {
      const std::string token = v.is_string() ? v.get<std::string>() : v.dump();
      return static_cast<double>(schema.category_index(c, token));
    }
    if (!v.is_number())
      throw Error("invalid_row", "column '" + col.name + "' expects a number, got " + v.dump());
    return v.get<double>();
  };
  if (doc.is_object()) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto& name = schema[c].name;
      if (!doc.contains(name)) throw Error("invalid_row", "point is missing column '" + name + "'");
      row(static_cast<Eigen::Index>(c)) = cell(c, doc[name]);
    }
    for (const auto& [key, _] : doc.items())
      if (!schema.index_of(key)) throw Error("unknown_column", "point has unknown column '" + key + "'");
  } else if (doc.is_array()) {
    if (doc.size() != schema.size())
      throw Error("invalid_row", "point has " + std::to_string(doc.size()) + " cells, schema has " +
                                     std::to_string(schema.size()));
    for (std::size_t c = 0; c < schema.size(); ++c) row(static_cast<Eigen::Index>(c)) = cell(c, doc[c]);
  } else {
    throw Error("invalid_row", "point must be a JSON object or array");
  }
  validate_row(schema, row);
  return row;
}

json row_to_json(const Schema& schema, const Row& row) {
  json out = json::object();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const double v = row(static_cast<Eigen::Index>(c));
    if (schema[c].kind == ColumnKind::categorical)
      out[schema[c].name] = schema[c].categories.at(static_cast<std::size_t>(v));
    else
      out[schema[c].name] = v;
  }
  return out;
}

json row_to_cells(const Schema& schema, const Row& row) {
  json out = json::array();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const double v = row(static_cast<Eigen::Index>(c));
    if (schema[c].kind == ColumnKind::categorical)
      out.push_back(schema[c].categories.at(static_cast<std::size_t>(v)));
    else
      out.push_back(v);
  }
  return out;
}

Eigen::VectorXd plain_row(const Schema& schema, const Row& row) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(schema.encoded_width()));
  Eigen::Index k = 0;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const double v = row(static_cast<Eigen::Index>(c));
    if (schema[c].kind == ColumnKind::numerical) {
      out(k++) = v;
    } else {
      out(k + static_cast<Eigen::Index>(v)) = 1.0;
      k += static_cast<Eigen::Index>(schema[c].categories.size());
    }
  }
  return out;
}

Eigen::MatrixXd plain_matrix(const Dataset& data) {
  Eigen::MatrixXd out(data.rows(), static_cast<Eigen::Index>(data.schema().encoded_width()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) out.row(r) = plain_row(data.schema(), data.row(r)).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Box-Cox

double boxcox(double x, double lambda) {
  if (lambda == 0.0) return std::log(x);
  return (std::pow(x, lambda) - 1.0) / lambda;
}

double boxcox_inverse(double y, double lambda) {
  if (lambda == 0.0) return std::exp(y);
  return std::pow(lambda * y + 1.0, 1.0 / lambda);
}

double boxcox_log_likelihood(std::span<const double> x, double lambda) {
  const double n = static_cast<double>(x.size());
  double log_sum = 0.0;
  double mean = 0.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    log_sum += std::log(x[i]);
    y[i] = boxcox(x[i], lambda);
    mean += y[i];
  }
  mean /= n;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0) || !std::isfinite(var)) return -std::numeric_limits<double>::infinity();
  return (lambda - 1.0) * log_sum - 0.5 * n * std::log(var);
}

double boxcox_condition(std::span<const double> x, double lambda) {
  double worst = 0.0;
  for (double v : x) worst = std::max(worst, std::abs(boxcox(v, lambda)) / std::pow(v, lambda));
  return worst;
}

double fit_boxcox_lambda(std::span<const double> x) {
  double best_lambda = 1.0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100; ++i) {
    const double lambda = static_cast<double>(i - 50) / 10.0;
    if (boxcox_condition(x, lambda) > kBoxCoxMaxCondition) continue;
    const double ll = boxcox_log_likelihood(x, lambda);
    if (ll > best_ll) {
      best_ll = ll;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

// ---------------------------------------------------------------------------
// Transforms

TransformModel fit_transforms(const Dataset& data, const TransformOptions& options) {
  if (data.empty()) throw Error("empty_dataset", "cannot fit transforms on an empty dataset");
  const auto& schema = data.schema();
  TransformModel model;
  model.schema = schema;
  model.options = options;
  model.numeric.resize(schema.size());
  model.one_hot.resize(schema.size());
  int offset = 0;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    model.offsets.push_back(offset);
    const auto col = data.values().col(static_cast<Eigen::Index>(c));
    if (schema[c].kind == ColumnKind::categorical) {
      const int width = static_cast<int>(schema[c].categories.size());
      model.one_hot[c] = OneHotBlock{offset, width};
      offset += width;
      continue;
    }
    NumericTransform t;
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    t.observed_min = lo;
    std::vector<double> v(col.data(), col.data() + col.size());
    if (options.passthrough_constant && !(hi > lo)) {
      model.numeric[c] = t;
      offset += 1;
      continue;
    }
    if (options.use_minmax && lo <= 0.0) {
      if (!(hi > lo))
        throw Error("degenerate_column", "column '" + schema[c].name + "' is constant; min-max undefined");
      t.minmax = MinMax{lo, hi};
      for (auto& x : v) x = (x - lo) / (hi - lo);
    }
    if (options.use_boxcox) {
      const double vmin = *std::min_element(v.begin(), v.end());
      const double shift = std::max(0.0, kBoxCoxEpsilon - vmin);
      for (auto& x : v) x += shift;
      t.boxcox = BoxCox{fit_boxcox_lambda(v), shift};
    }
    model.numeric[c] = t;
    offset += 1;
  }
  model.width = offset;
  return model;
}

EncodedMatrix apply_transforms(const TransformModel& model, const Dataset& data) {
  if (!(data.schema() == model.schema))
    throw Error("schema_mismatch", "dataset schema differs from the fitted transform schema");
  EncodedMatrix out = EncodedMatrix::Zero(data.rows(), model.width);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < model.schema.size(); ++c) {
      const double x = data.values()(r, static_cast<Eigen::Index>(c));
      if (const auto& block = model.one_hot[c]) {
        const int k = static_cast<int>(x);
        if (k < 0 || k >= block->width)
          throw Error("invalid_row", "category index out of range in column '" + model.schema[c].name + "'");
        out(r, block->offset + k) = 1.0;
        continue;
      }
      const auto& t = *model.numeric[c];
      double v = x;
      if (t.minmax) v = (v - t.minmax->lo) / (t.minmax->hi - t.minmax->lo);
      if (t.boxcox) {
        v += t.boxcox->shift;
        // Only new data can fall below the fitted support.
        v = std::max(v, std::numeric_limits<double>::min());
        v = boxcox(v, t.boxcox->lambda);
      }
      out(r, model.offsets[c]) = v;
    }
  }
  return out;
}

InverseResult invert_transforms(const TransformModel& model, const EncodedMatrix& encoded) {
  if (encoded.cols() != model.width)
    throw Error("width_mismatch", "encoded width " + std::to_string(encoded.cols()) +
                                      " does not match layout width " + std::to_string(model.width));
  Eigen::MatrixXd values(encoded.rows(), static_cast<Eigen::Index>(model.schema.size()));
  std::size_t clamped = 0;
  for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
    for (std::size_t c = 0; c < model.schema.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (const auto& block = model.one_hot[c]) {
        Eigen::Index k = 0;
        encoded.row(r).segment(block->offset, block->width).maxCoeff(&k);
        values(r, ci) = static_cast<double>(k);
        continue;
      }
      const auto& t = *model.numeric[c];
      double v = encoded(r, model.offsets[c]);
      if (t.boxcox) {
        const double lambda = t.boxcox->lambda;
        if (lambda != 0.0 && !(lambda * v + 1.0 > 0.0)) {
          values(r, ci) = t.observed_min;
          ++clamped;
          continue;
        }
        v = boxcox_inverse(v, lambda);
        if (!std::isfinite(v)) {
          values(r, ci) = t.observed_min;
          ++clamped;
          continue;
        }
        v -= t.boxcox->shift;
      }
      if (t.minmax) v = v * (t.minmax->hi - t.minmax->lo) + t.minmax->lo;
      if (!std::isfinite(v)) {
        v = t.observed_min;
        ++clamped;
      }
      values(r, ci) = v;
    }
  }
  return {Dataset(model.schema, std::move(values)), clamped};
}

Dataset encoded_to_dataset(const TransformModel& model, const EncodedMatrix& encoded) {
  Eigen::MatrixXd values(encoded.rows(), static_cast<Eigen::Index>(model.schema.size()));
  for (Eigen::Index r = 0; r < encoded.rows(); ++r) {
    for (std::size_t c = 0; c < model.schema.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (const auto& block = model.one_hot[c]) {
        Eigen::Index k = 0;
        encoded.row(r).segment(block->offset, block->width).maxCoeff(&k);
        values(r, ci) = static_cast<double>(k);
      } else {
        values(r, ci) = encoded(r, model.offsets[c]);
      }
    }
  }
  return Dataset(model.schema, std::move(values));
}

EncodedMatrix dataset_to_encoded(const TransformModel& model, const Dataset& data) {
  EncodedMatrix out = EncodedMatrix::Zero(data.rows(), model.width);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < model.schema.size(); ++c) {
      const double v = data.values()(r, static_cast<Eigen::Index>(c));
      if (const auto& block = model.one_hot[c])
        out(r, block->offset + static_cast<int>(v)) = 1.0;
      else
        out(r, model.offsets[c]) = v;
    }
  }
  return out;
}

json TransformModel::to_json() const {
  json cols = json::array();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    json j{{"name", schema[c].name}, {"offset", offsets[c]}};
    if (one_hot[c]) {
      j["one_hot"] = {{"offset", one_hot[c]->offset}, {"width", one_hot[c]->width}};
    } else {
      const auto& t = *numeric[c];
      if (t.minmax) j["minmax"] = {{"lo", t.minmax->lo}, {"hi", t.minmax->hi}};
      if (t.boxcox) j["boxcox"] = {{"lambda", t.boxcox->lambda}, {"shift", t.boxcox->shift}};
      j["observed_min"] = t.observed_min;
    }
    cols.push_back(std::move(j));
  }
  return json{{"use_minmax", options.use_minmax}, {"use_boxcox", options.use_boxcox},
              {"width", width}, {"columns", std::move(cols)}};
}

// ---------------------------------------------------------------------------
// KNN

std::vector<Eigen::Index> knn_indices(const Dataset& data, const Row& point, std::size_t k) {
  if (data.empty()) throw Error("empty_dataset", "knn on an empty dataset");
  if (k == 0 || k > static_cast<std::size_t>(data.rows()))
    throw Error("invalid_k", "k must be in [1, " + std::to_string(data.rows()) + "], got " + std::to_string(k));
  validate_row(data.schema(), point);
  const auto& schema = data.schema();
  const auto& X = data.values();
  const Eigen::Index n = X.rows();

  std::vector<double> mean(schema.size(), 0.0), sd(schema.size(), 1.0);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].kind != ColumnKind::numerical) continue;
    const auto col = X.col(static_cast<Eigen::Index>(c));
    mean[c] = col.mean();
    const double var = (col.array() - mean[c]).square().mean();
    sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }

  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    double sq = 0.0, mismatch = 0.0;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (schema[c].kind == ColumnKind::numerical) {
        const double d = (X(r, ci) - point(ci)) / sd[c];
        sq += d * d;
      } else if (X(r, ci) != point(ci)) {
        mismatch += 1.0;
      }
    }
    dist[static_cast<std::size_t>(r)] = std::sqrt(sq) + mismatch;
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
  });
  order.resize(k);
  return order;
}

Dataset knn(const Dataset& data, const Row& point, std::size_t k) {
  const auto idx = knn_indices(data, point, k);
  return data.select(idx);
}

}  // namespace lmte
