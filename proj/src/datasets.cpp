#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include "lmte/evalkit.hpp"

namespace lmte {

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

Column numeric(std::string name) { return Column{std::move(name), ColumnKind::numerical, {}}; }
Column categorical(std::string name, std::vector<std::string> cats) {
  return Column{std::move(name), ColumnKind::categorical, std::move(cats)};
}
Column binary_label() { return categorical("label", {"0", "1"}); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Two interleaving half circles with Gaussian jitter.
BundledDataset two_moons() {
  constexpr int n = 500;
  std::mt19937_64 rng(20240501);
  std::normal_distribution<double> noise(0.0, 0.1);
  Eigen::MatrixXd v(n, 3);
  for (int i = 0; i < n; ++i) {
    const bool upper = i < n / 2;
    const int k = upper ? i : i - n / 2;
    const double t = std::numbers::pi * k / (n / 2 - 1);
    const double x = upper ? std::cos(t) : 1.0 - std::cos(t);
    const double y = upper ? std::sin(t) : 0.5 - std::sin(t);
    v(i, 0) = round4(x + noise(rng));
    v(i, 1) = round4(y + noise(rng));
    v(i, 2) = upper ? 0.0 : 1.0;
  }
  return {"two_moons", Task::classification, "label",
          Dataset(Schema({numeric("x1"), numeric("x2"), binary_label()}), std::move(v))};
}

// Loan applicants with a default flag driven mostly by utilization, debt
// ratio and housing status.
BundledDataset credit() {
  constexpr int n = 600;
  std::mt19937_64 rng(20240502);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::poisson_distribution<int> accounts(4.0);
  std::discrete_distribution<int> home({0.4, 0.25, 0.35});
  std::discrete_distribution<int> purpose({0.3, 0.2, 0.2, 0.3});
  Eigen::MatrixXd v(n, 8);
  for (int i = 0; i < n; ++i) {
    const double income = std::exp(10.8 + 0.45 * normal(rng));
    const double age = 21.0 + 49.0 * unif(rng);
    const double util = std::clamp(55.0 + 25.0 * normal(rng), 0.0, 100.0);
    const double debt = std::clamp(0.35 + 0.15 * normal(rng), 0.0, 1.0);
    const int acc = accounts(rng);
    const int h = home(rng);
    const int p = purpose(rng);
    const double z = -0.4 + 3.0 * (util - 60.0) / 25.0 * (util > 60.0 ? 1.0 : 0.35) + 2.5 * (debt - 0.35) / 0.15 +
                     (h == 0 ? 0.8 : -0.3) - 0.6 * (std::log(income) - 10.8) / 0.45 + 0.15 * normal(rng);
    v(i, 0) = round4(income / 1000.0);
    v(i, 1) = round4(age);
    v(i, 2) = round4(util);
    v(i, 3) = round4(debt);
    v(i, 4) = acc;
    v(i, 5) = h;
    v(i, 6) = p;
    v(i, 7) = unif(rng) < sigmoid(2.0 * z) ? 1.0 : 0.0;
  }
  Schema schema({numeric("income_k"), numeric("age"), numeric("utilization"), numeric("debt_ratio"),
                 numeric("open_accounts"), categorical("home", {"rent", "own", "mortgage"}),
                 categorical("purpose", {"car", "home", "education", "other"}), binary_label()});
  return {"credit", Task::classification, "label", Dataset(std::move(schema), std::move(v))};
}

// Six gauges; alarms fire when temperature and vibration jointly exceed a
// curved boundary. Two gauges are irrelevant.
BundledDataset sensor() {
  constexpr int n = 600;
  std::mt19937_64 rng(20240503);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd v(n, 7);
  for (int i = 0; i < n; ++i) {
    const double temp = 60.0 + 12.0 * normal(rng);
    const double vib = 2.0 + 0.8 * normal(rng);
    const double pressure = 30.0 + 5.0 * normal(rng);
    const double humidity = 45.0 + 10.0 * normal(rng);
    const double voltage = 220.0 + 4.0 * normal(rng);
    const double load = 0.5 + 0.2 * normal(rng);
    const double z = (temp - 60.0) / 12.0 + 1.2 * (vib - 2.0) / 0.8 + 0.5 * std::pow((pressure - 30.0) / 5.0, 2) - 0.6 +
                     0.2 * normal(rng);
    v(i, 0) = round4(temp);
    v(i, 1) = round4(vib);
    v(i, 2) = round4(pressure);
    v(i, 3) = round4(humidity);
    v(i, 4) = round4(voltage);
    v(i, 5) = round4(load);
    v(i, 6) = z > 0.0 ? 1.0 : 0.0;
  }
  Schema schema({numeric("temperature"), numeric("vibration"), numeric("pressure"), numeric("humidity"),
                 numeric("voltage"), numeric("load"), binary_label()});
  return {"sensor", Task::classification, "label", Dataset(std::move(schema), std::move(v))};
}

// Friedman #1 with three noise inputs.
BundledDataset friedman1() {
  constexpr int n = 500;
  std::mt19937_64 rng(20240504);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd v(n, 9);
  std::vector<Column> cols;
  for (int j = 0; j < 8; ++j) cols.push_back(numeric("x" + std::to_string(j + 1)));
  cols.push_back(numeric("target"));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 8; ++j) v(i, j) = round4(unif(rng));
    const double y = 10.0 * std::sin(std::numbers::pi * v(i, 0) * v(i, 1)) + 20.0 * std::pow(v(i, 2) - 0.5, 2) +
                     10.0 * v(i, 3) + 5.0 * v(i, 4) + normal(rng);
    v(i, 8) = round4(y);
  }
  return {"friedman1", Task::regression, "target", Dataset(Schema(std::move(cols)), std::move(v))};
}

// Property prices with district and condition effects and a size kink.
BundledDataset housing() {
  constexpr int n = 500;
  std::mt19937_64 rng(20240505);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::discrete_distribution<int> district({0.3, 0.3, 0.2, 0.2});
  std::discrete_distribution<int> condition({0.2, 0.5, 0.3});
  const double district_effect[] = {0.0, 40.0, 90.0, -20.0};
  const double condition_effect[] = {-30.0, 0.0, 25.0};
  Eigen::MatrixXd v(n, 6);
  for (int i = 0; i < n; ++i) {
    const double size = std::exp(4.4 + 0.35 * normal(rng));
    const double age = 80.0 * unif(rng);
    const double dist_center = 1.0 + 14.0 * unif(rng);
    const int d = district(rng);
    const int c = condition(rng);
    const double price = 50.0 + 1.8 * size + 1.2 * std::max(0.0, size - 110.0) - 0.9 * age -
                         6.0 * std::sqrt(dist_center) * (d == 2 ? 2.0 : 1.0) + district_effect[d] +
                         condition_effect[c] + 10.0 * normal(rng);
    v(i, 0) = round4(size);
    v(i, 1) = round4(age);
    v(i, 2) = round4(dist_center);
    v(i, 3) = d;
    v(i, 4) = c;
    v(i, 5) = round4(price);
  }
  Schema schema({numeric("size_m2"), numeric("age_years"), numeric("distance_km"),
                 categorical("district", {"north", "south", "center", "east"}),
                 categorical("condition", {"poor", "fair", "good"}), numeric("target")});
  return {"housing", Task::regression, "target", Dataset(std::move(schema), std::move(v))};
}

const std::vector<std::pair<std::string, std::function<BundledDataset()>>>& generators() {
  static const std::vector<std::pair<std::string, std::function<BundledDataset()>>> g{
      {"two_moons", two_moons}, {"credit", credit}, {"sensor", sensor}, {"friedman1", friedman1}, {"housing", housing}};
  return g;
}

}  // namespace

std::vector<std::string> bundled_dataset_ids() {
  std::vector<std::string> out;
  for (const auto& [id, _] : generators()) out.push_back(id);
  return out;
}

BundledDataset make_bundled_dataset(const std::string& id) {
  for (const auto& [name, gen] : generators())
    if (name == id) return gen();
  throw Error("unknown_dataset", "no bundled dataset named '" + id + "'");
}

std::vector<std::filesystem::path> write_bundled_datasets(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& id : bundled_dataset_ids()) {
    const auto ds = make_bundled_dataset(id);
    const auto csv = dir / (id + ".csv");
    const auto schema = dir / (id + ".schema.json");
    write_csv(csv, ds.data);
    json sidecar = ds.data.schema().to_json();
    sidecar["task"] = to_string(ds.task);
    sidecar["label"] = ds.label;
    std::ofstream out(schema);
    if (!out) throw Error("io_error", "cannot write " + schema.string());
    out << sidecar.dump(2) << "\n";
    written.push_back(csv);
    written.push_back(schema);
  }
  return written;
}

BundledDataset load_bundled_dataset(const std::string& id, const std::filesystem::path& dir) {
  const auto csv = dir / (id + ".csv");
  const auto schema_path = dir / (id + ".schema.json");
  if (!std::filesystem::exists(csv) || !std::filesystem::exists(schema_path)) return make_bundled_dataset(id);
  std::ifstream in(schema_path);
  const json sidecar = json::parse(in);
  BundledDataset ds;
  ds.id = id;
  ds.task = task_from_string(sidecar.value("task", std::string("classification")));
  ds.label = sidecar.value("label", std::string("label"));
  ds.data = load_csv(csv, Schema::from_json(sidecar));
  return ds;
}

}  // namespace lmte
