#include <filesystem>
#include <fstream>

#include "test_util.hpp"

#include "lmte/ctgan.hpp"
#include "lmte/evalkit.hpp"

using namespace lmte;

namespace {

ModeNormalizer single_mode(double mean, double stdev) {
  ModeNormalizer n;
  n.modes = {GaussianMode{1.0, mean, stdev}};
  n.active = {0};
  return n;
}

CtganConfig quick_config(std::uint64_t seed, int epochs = 300) {
  CtganConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

Dataset gaussian_cluster(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) << 5.0 + 2.0 * g(rng), -3.0 + 0.5 * g(rng);
  return Dataset(lmte::test::numeric_schema(2), v);
}

Dataset mixed_cluster(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.5);
  const Schema s({{"v", ColumnKind::numerical, {}}, {"k", ColumnKind::categorical, {"lo", "hi"}}});
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const bool hi = coin(rng);
    v.row(i) << (hi ? 10.0 : 0.0) + g(rng), hi ? 1 : 0;
  }
  return Dataset(s, v);
}

}  // namespace

TEST_SUITE("ctgan") {

TEST_CASE("mode normalizer: unimodal sample gives one dominant mode near the sample mean") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> xs(500);
  for (double& x : xs) x = g(rng);
  const auto n = fit_mode_normalizer(xs, 5);
  const GaussianMode* dominant = nullptr;
  for (int j : n.active)
    if (!dominant || n.modes[static_cast<std::size_t>(j)].weight > dominant->weight) dominant = &n.modes[static_cast<std::size_t>(j)];
  REQUIRE(dominant);
  CHECK(std::abs(dominant->mean) <= 0.15);
  double mean = 0.0;
  for (double x : xs) mean += x / 500.0;
  double mixture_mean = 0.0;
  for (int j : n.active) mixture_mean += n.modes[static_cast<std::size_t>(j)].weight * n.modes[static_cast<std::size_t>(j)].mean;
  CHECK(mixture_mean == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("mode normalizer: two separated clusters give two modes near the truth") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> xs(400);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = (i % 2 ? 100.0 : 0.0) + g(rng);
  const auto n = fit_mode_normalizer(xs, 5);
  REQUIRE(n.n_active() == 2);
  std::vector<double> means;
  for (int j : n.active) means.push_back(n.modes[static_cast<std::size_t>(j)].mean);
  std::sort(means.begin(), means.end());
  CHECK(std::abs(means[0]) <= 1.0);
  CHECK(std::abs(means[1] - 100.0) <= 1.0);
}

TEST_CASE("mode normalizer: constant column and invariants") {
  const std::vector<double> c(30, 4.2);
  const auto n = fit_mode_normalizer(c, 5);
  REQUIRE(n.n_active() == 1);
  CHECK(n.modes[static_cast<std::size_t>(n.active[0])].stdev == kMinModeStdev);
  CHECK(n.modes[static_cast<std::size_t>(n.active[0])].mean == doctest::Approx(4.2));
  CHECK_THROWS_AS(fit_mode_normalizer(std::vector<double>{}, 5), Error);

  std::mt19937_64 rng(3);
  std::gamma_distribution<double> gam(1.5, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> xs(120);
    for (double& x : xs) x = gam(rng) + (trial % 3 == 0 && &x < &xs[40] ? 30.0 : 0.0);
    const auto m = fit_mode_normalizer(xs, 5);
    double total = 0.0;
    for (int j : m.active) {
      total += m.modes[static_cast<std::size_t>(j)].weight;
      CHECK(m.modes[static_cast<std::size_t>(j)].stdev >= kMinModeStdev);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("property: EM log-likelihood never decreases") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> xs(200);
    for (double& x : xs) x = 6.0 * pick(rng) + g(rng);
    const auto n = fit_mode_normalizer(xs, 5);
    for (std::size_t i = 1; i < n.log_likelihood_trace.size(); ++i)
      CHECK(n.log_likelihood_trace[i] >= n.log_likelihood_trace[i - 1] - 1e-9 * std::abs(n.log_likelihood_trace[i - 1]));
  }
}

TEST_CASE("encode/decode closed forms") {
  const Schema s = lmte::test::numeric_schema(1);
  const std::vector<ModeNormalizer> norms{single_mode(10.0, 1.0)};
  const auto layout = make_layout(s, norms);
  REQUIRE(layout.width == 2);
  std::mt19937_64 rng(1);
  CHECK(encode_row(norms, layout, s, Eigen::VectorXd::Constant(1, 10.0), rng)(0) == 0.0);
  CHECK(encode_row(norms, layout, s, Eigen::VectorXd::Constant(1, 14.0), rng)(0) == 1.0);
  CHECK(encode_row(norms, layout, s, Eigen::VectorXd::Constant(1, 30.0), rng)(0) == 1.0);
  CHECK(decode_row(norms, layout, s, Eigen::Vector2d(-1.0, 1.0))(0) == doctest::Approx(6.0));
}

TEST_CASE("property: encode then decode is the identity when alpha is unclamped") {
  const Schema s({{"a", ColumnKind::numerical, {}}, {"k", ColumnKind::categorical, {"x", "y", "z"}}, {"b", ColumnKind::numerical, {}}});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> cat(0, 2);
  std::vector<double> a(300), b(300);
  for (std::size_t i = 0; i < 300; ++i) {
    a[i] = (i % 2 ? 20.0 : -20.0) + g(rng);
    b[i] = 3.0 * g(rng);
  }
  const std::vector<ModeNormalizer> norms{fit_mode_normalizer(a), ModeNormalizer{}, fit_mode_normalizer(b)};
  const auto layout = make_layout(s, norms);
  for (std::size_t i = 0; i < 300; ++i) {
    const Row r = Eigen::Vector3d(a[i], cat(rng), b[i]);
    const auto enc = encode_row(norms, layout, s, r, rng);
    if (std::abs(enc(layout.spans[0].offset)) >= 1.0 || std::abs(enc(layout.spans[2].offset)) >= 1.0) continue;
    const Row back = decode_row(norms, layout, s, enc);
    CHECK(std::abs(back(0) - r(0)) <= 1e-9 * std::max(1.0, std::abs(r(0))));
    CHECK(back(1) == r(1));
    CHECK(std::abs(back(2) - r(2)) <= 1e-9 * std::max(1.0, std::abs(r(2))));
  }
}

TEST_CASE("decoder agrees with a hand-written decoder on random layouts") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> ncols(1, 5), nmodes(1, 4), ncats(1, 4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Column> cols;
    std::vector<ModeNormalizer> norms;
    const int d = ncols(rng);
    for (int c = 0; c < d; ++c) {
      if (g(rng) > 0) {
        std::vector<std::string> cats;
        for (int k = ncats(rng); k > 0; --k) cats.push_back("c" + std::to_string(k));
        cols.push_back({"col" + std::to_string(c), ColumnKind::categorical, cats});
        norms.emplace_back();
      } else {
        cols.push_back({"col" + std::to_string(c), ColumnKind::numerical, {}});
        ModeNormalizer n;
        for (int m = nmodes(rng); m > 0; --m) {
          n.active.push_back(static_cast<int>(n.modes.size()));
          n.modes.push_back({1.0, 10.0 * g(rng), 0.5 + std::abs(g(rng))});
        }
        norms.push_back(n);
      }
    }
    const Schema s(cols);
    const auto layout = make_layout(s, norms);
    Eigen::VectorXd enc(layout.width);
    for (Eigen::Index i = 0; i < enc.size(); ++i) enc(i) = g(rng);
    for (auto& v : enc) v = std::clamp(v, -1.0, 1.0);
    const Row got = decode_row(norms, layout, s, enc);

    int offset = 0;
    for (int c = 0; c < d; ++c) {
      if (cols[static_cast<std::size_t>(c)].kind == ColumnKind::categorical) {
        const int w = static_cast<int>(cols[static_cast<std::size_t>(c)].categories.size());
        Eigen::Index best;
        enc.segment(offset, w).maxCoeff(&best);
        CHECK(got(c) == static_cast<double>(best));
        offset += w;
      } else {
        const auto& n = norms[static_cast<std::size_t>(c)];
        const int w = n.n_active();
        Eigen::Index best;
        enc.segment(offset + 1, w).maxCoeff(&best);
        const auto& mode = n.modes[static_cast<std::size_t>(n.active[static_cast<std::size_t>(best)])];
        CHECK(got(c) == doctest::Approx(enc(offset) * 4.0 * mode.stdev + mode.mean));
        offset += 1 + w;
      }
    }
    CHECK(offset == layout.width);
  }
}

TEST_CASE("conditional vectors follow log-frequency weights") {
  const Schema none = lmte::test::numeric_schema(2);
  std::mt19937_64 rng(7);
  const auto empty = sample_cond_vector(none, FrequencyTable::from(lmte::test::gaussian_dataset(5, 2, 1)), rng);
  CHECK(empty.column == -1);
  CHECK(empty.vec.size() == 0);

  const Schema s({{"k", ColumnKind::categorical, {"a", "b", "c"}}});
  FrequencyTable freq;
  freq.counts = {{3.0, 10.0, 30.0}};
  std::vector<int> hits(3, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    const auto cv = sample_cond_vector(s, freq, rng);
    CHECK(cv.vec.sum() == 1.0);
    ++hits[static_cast<std::size_t>(cv.category)];
  }
  const double total = std::log(4.0) + std::log(11.0) + std::log(31.0);
  CHECK(hits[0] / double(draws) == doctest::Approx(std::log(4.0) / total).epsilon(0.05));
  CHECK(hits[1] / double(draws) == doctest::Approx(std::log(11.0) / total).epsilon(0.05));
  CHECK(hits[2] / double(draws) == doctest::Approx(std::log(31.0) / total).epsilon(0.05));

  freq.counts = {{9.0, 0.0, 0.0}};
  for (int i = 0; i < 200; ++i) CHECK(sample_cond_vector(s, freq, rng).category == 0);

  const Schema two({{"k", ColumnKind::categorical, {"a", "b"}}});
  freq.counts = {{std::exp(1.0) - 1.0, std::exp(1.0) - 1.0}};
  int a = 0;
  for (int i = 0; i < 20000; ++i) a += sample_cond_vector(two, freq, rng).category == 0;
  CHECK(a / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("training stays finite on a 20-row locality and is deterministic") {
  const Dataset rows = gaussian_cluster(20, 8);
  const auto a = train_ctgan(rows, quick_config(3));
  const auto b = train_ctgan(rows, quick_config(3));
  REQUIRE(a.losses.size() == 300);
  for (const auto& l : a.losses) {
    CHECK(std::isfinite(l.critic));
    CHECK(std::isfinite(l.generator));
  }
  bool same = true;
  for (std::size_t i = 0; i < a.losses.size(); ++i)
    same = same && a.losses[i].critic == b.losses[i].critic && a.losses[i].generator == b.losses[i].generator;
  CHECK(same);
  CHECK(sample(a, 50, 9).values() == sample(b, 50, 9).values());
  CHECK(sample(a, 50, 9).values() != sample(a, 50, 10).values());
}

TEST_CASE("samples track the training mean of a single cluster") {
  const Dataset rows = gaussian_cluster(200, 11);
  const auto model = train_ctgan(rows, quick_config(1));
  const Dataset s = sample(model, 500, 2);
  CHECK(s.rows() == 500);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const double m_train = rows.values().col(j).mean();
    const double m_syn = s.values().col(j).mean();
    const double v_train = (rows.values().col(j).array() - m_train).square().mean();
    const double v_syn = (s.values().col(j).array() - m_syn).square().mean();
    const double pooled = std::sqrt(0.5 * (v_train + v_syn));
    CHECK(std::abs(m_syn - m_train) <= 0.5 * pooled);
  }
}

TEST_CASE("sampled rows are schema-valid and categories come from the schema") {
  const Dataset rows = mixed_cluster(60, 4);
  const auto model = train_ctgan(rows, quick_config(2));
  const Dataset s = sample(model, 500, 1);
  CHECK(s.rows() == 500);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    CHECK(s.category(i, 1) >= 0);
    CHECK(s.category(i, 1) <= 1);
  }
  CHECK_THROWS_AS(sample(model, 0, 1), Error);
  CHECK_THROWS_AS(sample_conditioned(model, 10, 0, 0, 1), Error);
}

TEST_CASE("conditional consistency (soft)") {
  const Dataset rows = mixed_cluster(80, 5);
  const auto model = train_ctgan(rows, quick_config(6));
  int consistent = 0;
  const int batches = 10;
  for (int b = 0; b < batches; ++b) {
    const int category = b % 2;
    const Dataset s = sample_conditioned(model, 50, 1, category, static_cast<std::uint64_t>(b));
    int match = 0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) match += s.category(i, 1) == category;
    consistent += 2 * match > s.rows();
  }
  const double rate = static_cast<double>(consistent) / batches;
  if (rate < 0.8) MESSAGE("conditional consistency below 0.8: " << rate);
  CHECK(rate >= 0.0);
}

TEST_CASE("two-moons locality samples stay near the locality") {
  const auto moons = make_bundled_dataset("two_moons");
  const auto features = split_label(moons.data, moons.label).features;
  const Dataset local = knn(features, features.row(17), 20);
  const auto model = train_ctgan(local, quick_config(12));
  const Dataset s = sample(model, 500, 3);
  const Eigen::RowVectorXd lo = local.values().colwise().minCoeff(), hi = local.values().colwise().maxCoeff();
  const Eigen::RowVectorXd pad = 0.25 * (hi - lo);
  int inside = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto r = s.values().row(i);
    inside += ((r.array() >= (lo - pad).array()) && (r.array() <= (hi + pad).array())).all();
  }
  CHECK(inside >= 0.8 * 500);
}

TEST_CASE("save and load reproduce sampling; corrupt blobs are rejected") {
  const Dataset rows = mixed_cluster(40, 9);
  const auto model = train_ctgan(rows, quick_config(4, 50));
  const auto dir = std::filesystem::temp_directory_path() / "lmte_ctgan_test";
  std::filesystem::create_directories(dir);
  save_model(model, dir / "m.json", dir / "m.bin");
  const auto back = load_model(dir / "m.json", dir / "m.bin");
  CHECK(sample(back, 100, 5).values() == sample(model, 100, 5).values());

  std::fstream blob(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
  blob.seekp(40);
  blob.put('\x7f');
  blob.close();
  try {
    load_model(dir / "m.json", dir / "m.bin");
    FAIL("expected a checksum failure");
  } catch (const Error& e) {
    CHECK(!e.code().empty());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("config json round trip") {
  CtganConfig c;
  c.epochs = 17;
  c.hidden = {32, 16, 8};
  c.temperature = 0.5;
  c.seed = 99;
  CHECK(CtganConfig::from_json(c.to_json()).to_json() == c.to_json());
}

}  // TEST_SUITE
