#include "lmte/ctgan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "util.hpp"

namespace lmte {

namespace {

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Mode normalizer

std::vector<double> ModeNormalizer::active_log_densities(double x) const {
  std::vector<double> out;
  out.reserve(active.size());
  for (int m : active) {
    const auto& g = modes[static_cast<std::size_t>(m)];
    out.push_back(std::log(g.weight) + log_normal_pdf(x, g.mean, g.stdev));
  }
  return out;
}

namespace {

/// EM for a k-component mixture with quantile initialization. Returns the
/// fitted modes (inactive ones included) and the final log-likelihood.
std::pair<ModeNormalizer, double> fit_mixture(std::span<const double> values, const std::vector<double>& sorted,
                                              int k) {
  const auto n = values.size();
  const double nd = static_cast<double>(n);
  const double mean_all = std::accumulate(sorted.begin(), sorted.end(), 0.0) / nd;
  double var_all = 0.0;
  for (double x : sorted) var_all += (x - mean_all) * (x - mean_all);
  var_all /= nd;

  ModeNormalizer norm;
  norm.modes.resize(static_cast<std::size_t>(k));
  if (k == 1) {
    norm.modes[0] = GaussianMode{1.0, mean_all, std::max(std::sqrt(var_all), kMinModeStdev)};
    double ll = 0.0;
    for (double x : values) ll += log_normal_pdf(x, norm.modes[0].mean, norm.modes[0].stdev);
    norm.log_likelihood_trace.push_back(ll);
    return {norm, ll};
  }
  for (int j = 0; j < k; ++j) {
    const double q = (j + 0.5) / k;
    auto& g = norm.modes[static_cast<std::size_t>(j)];
    g.mean = sorted[static_cast<std::size_t>(q * static_cast<double>(n - 1) + 0.5)];
    g.stdev = std::max(std::sqrt(var_all) / k, kMinModeStdev);
    g.weight = 1.0 / k;
  }

  const auto ku = static_cast<std::size_t>(k);
  std::vector<double> resp(n * ku);
  std::vector<double> logp(ku);
  double prev_ll = -std::numeric_limits<double>::infinity();
  double ll = prev_ll;
  for (int iter = 0; iter < 100; ++iter) {
    ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < ku; ++j) {
        const auto& g = norm.modes[j];
        logp[j] = g.weight > 0.0 ? std::log(g.weight) + log_normal_pdf(values[i], g.mean, g.stdev)
                                 : -std::numeric_limits<double>::infinity();
      }
      const double lse = log_sum_exp(logp);
      ll += lse;
      for (std::size_t j = 0; j < ku; ++j) resp[i * ku + j] = std::exp(logp[j] - lse);
    }
    norm.log_likelihood_trace.push_back(ll);
    if (std::abs(ll - prev_ll) < 1e-8) break;
    prev_ll = ll;
    for (std::size_t j = 0; j < ku; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * ku + j];
        sx += resp[i * ku + j] * values[i];
      }
      auto& g = norm.modes[j];
      if (nk <= 1e-12) {
        g.weight = 0.0;
        continue;
      }
      g.weight = nk / nd;
      g.mean = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = values[i] - g.mean;
        sv += resp[i * ku + j] * d * d;
      }
      g.stdev = std::max(std::sqrt(sv / nk), kMinModeStdev);
    }
  }
  return {norm, ll};
}

}  // namespace

ModeNormalizer fit_mode_normalizer(std::span<const double> values, int k_modes) {
  if (values.empty()) throw Error("empty_column", "cannot fit a mode normalizer on an empty column");
  if (k_modes < 1) throw Error("invalid_config", "k_modes must be >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq = sorted;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const int k_max = std::min<int>(k_modes, static_cast<int>(uniq.size()));
  const double log_n = std::log(static_cast<double>(values.size()));

  ModeNormalizer norm;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_max; ++k) {
    auto [candidate, ll] = fit_mixture(values, sorted, k);
    const double bic = -2.0 * ll + (3.0 * k - 1.0) * log_n;
    if (bic < best_bic) {
      best_bic = bic;
      norm = std::move(candidate);
    }
  }

  double active_total = 0.0;
  for (std::size_t j = 0; j < norm.modes.size(); ++j) {
    if (norm.modes[j].weight >= kModeWeightFloor) {
      norm.active.push_back(static_cast<int>(j));
      active_total += norm.modes[j].weight;
    }
  }
  for (int j : norm.active) norm.modes[static_cast<std::size_t>(j)].weight /= active_total;
  return norm;
}

// ---------------------------------------------------------------------------
// Layout and row codec

CtganLayout make_layout(const Schema& schema, const std::vector<ModeNormalizer>& normalizers) {
  if (normalizers.size() != schema.size())
    throw Error("shape_mismatch", "need one normalizer slot per schema column");
  CtganLayout layout;
  int offset = 0;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    CtganLayout::Span s;
    s.column = c;
    s.offset = offset;
    if (schema[c].kind == ColumnKind::numerical) {
      const int modes = normalizers[c].n_active();
      s.numerical = true;
      s.width = 1 + modes;
      layout.segments.push_back({offset + 1, modes});
      layout.cond_offsets.push_back(-1);
    } else {
      s.numerical = false;
      s.width = static_cast<int>(schema[c].categories.size());
      layout.segments.push_back({offset, s.width});
      layout.cond_offsets.push_back(layout.cond_width);
      layout.cond_width += s.width;
    }
    offset += s.width;
    layout.spans.push_back(s);
  }
  layout.width = offset;
  return layout;
}

Eigen::VectorXd encode_row(const std::vector<ModeNormalizer>& normalizers, const CtganLayout& layout,
                           const Schema& schema, const Row& row, std::mt19937_64& rng) {
  validate_row(schema, row);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(layout.width);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& s : layout.spans) {
    const double x = row(static_cast<Eigen::Index>(s.column));
    if (!s.numerical) {
      out(s.offset + static_cast<int>(x)) = 1.0;
      continue;
    }
    const auto& norm = normalizers[s.column];
    const auto logd = norm.active_log_densities(x);
    const double lse = log_sum_exp(logd);
    std::size_t pick = 0;
    if (std::isfinite(lse)) {
      double u = unif(rng), acc = 0.0;
      pick = logd.size() - 1;
      for (std::size_t j = 0; j < logd.size(); ++j) {
        acc += std::exp(logd[j] - lse);
        if (u < acc) {
          pick = j;
          break;
        }
      }
    } else {
      // far outside every mode: nearest mean
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < norm.active.size(); ++j) {
        const double d = std::abs(x - norm.modes[static_cast<std::size_t>(norm.active[j])].mean);
        if (d < best) {
          best = d;
          pick = j;
        }
      }
    }
    const auto& g = norm.modes[static_cast<std::size_t>(norm.active[pick])];
    out(s.offset) = std::clamp((x - g.mean) / (4.0 * g.stdev), -1.0, 1.0);
    out(s.offset + 1 + static_cast<int>(pick)) = 1.0;
  }
  return out;
}

Row decode_row(const std::vector<ModeNormalizer>& normalizers, const CtganLayout& layout, const Schema& schema,
               const Eigen::Ref<const Eigen::VectorXd>& encoded) {
  if (encoded.size() != layout.width)
    throw Error("width_mismatch", "encoded width " + std::to_string(encoded.size()) + " != layout width " +
                                      std::to_string(layout.width));
  Row row(static_cast<Eigen::Index>(schema.size()));
  for (const auto& s : layout.spans) {
    Eigen::Index k = 0;
    if (!s.numerical) {
      encoded.segment(s.offset, s.width).maxCoeff(&k);
      row(static_cast<Eigen::Index>(s.column)) = static_cast<double>(k);
      continue;
    }
    encoded.segment(s.offset + 1, s.width - 1).maxCoeff(&k);
    const auto& norm = normalizers[s.column];
    const auto& g = norm.modes[static_cast<std::size_t>(norm.active[static_cast<std::size_t>(k)])];
    const double alpha = std::clamp(encoded(s.offset), -1.0, 1.0);
    row(static_cast<Eigen::Index>(s.column)) = alpha * 4.0 * g.stdev + g.mean;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Conditional vectors

FrequencyTable FrequencyTable::from(const Dataset& data) {
  FrequencyTable t;
  const auto& schema = data.schema();
  t.counts.resize(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].kind != ColumnKind::categorical) continue;
    t.counts[c].assign(schema[c].categories.size(), 0.0);
    for (Eigen::Index r = 0; r < data.rows(); ++r) t.counts[c][static_cast<std::size_t>(data.category(r, c))] += 1.0;
  }
  return t;
}

json FrequencyTable::to_json() const { return json(counts); }

FrequencyTable FrequencyTable::from_json(const json& doc) {
  FrequencyTable t;
  t.counts = doc.get<std::vector<std::vector<double>>>();
  return t;
}

namespace {

std::vector<std::size_t> categorical_columns(const Schema& schema) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < schema.size(); ++c)
    if (schema[c].kind == ColumnKind::categorical) out.push_back(c);
  return out;
}

int cond_width(const Schema& schema) {
  int w = 0;
  for (const auto& c : schema.columns())
    if (c.kind == ColumnKind::categorical) w += static_cast<int>(c.categories.size());
  return w;
}

int cond_offset(const Schema& schema, std::size_t column) {
  int w = 0;
  for (std::size_t c = 0; c < column; ++c)
    if (schema[c].kind == ColumnKind::categorical) w += static_cast<int>(schema[c].categories.size());
  return w;
}

// Draws a category with probability proportional to weight(count).
template <class Weight>
CondVector draw_condition(const Schema& schema, const FrequencyTable& freq, std::mt19937_64& rng, Weight weight) {
  CondVector cv;
  cv.vec = Eigen::VectorXd::Zero(cond_width(schema));
  const auto cats = categorical_columns(schema);
  if (cats.empty()) return cv;
  std::uniform_int_distribution<std::size_t> pick_col(0, cats.size() - 1);
  const std::size_t col = cats[pick_col(rng)];
  const auto& counts = freq.counts.at(col);
  std::vector<double> w(counts.size());
  std::transform(counts.begin(), counts.end(), w.begin(), weight);
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(w.size());
  }
  std::uniform_real_distribution<double> unif(0.0, total);
  const double u = unif(rng);
  double acc = 0.0;
  std::size_t cat = w.size() - 1;
  for (std::size_t k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) {
      cat = k;
      break;
    }
  }
  cv.column = static_cast<int>(col);
  cv.category = static_cast<int>(cat);
  cv.vec(cond_offset(schema, col) + static_cast<int>(cat)) = 1.0;
  return cv;
}

}  // namespace

CondVector sample_cond_vector(const Schema& schema, const FrequencyTable& freq, std::mt19937_64& rng) {
  return draw_condition(schema, freq, rng, [](double c) { return std::log1p(c); });
}

// ---------------------------------------------------------------------------
// Config

json CtganConfig::to_json() const {
  return json{{"epochs", epochs},     {"batch", batch},
              {"z_dim", z_dim},       {"critic_steps", critic_steps},
              {"gp_coeff", gp_coeff}, {"hidden", hidden},
              {"temperature", temperature}, {"k_modes", k_modes},
              {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
              {"seed", seed}};
}

CtganConfig CtganConfig::from_json(const json& doc) {
  CtganConfig c;
  c.epochs = doc.value("epochs", c.epochs);
  c.batch = doc.value("batch", c.batch);
  c.z_dim = doc.value("z_dim", c.z_dim);
  c.critic_steps = doc.value("critic_steps", c.critic_steps);
  c.gp_coeff = doc.value("gp_coeff", c.gp_coeff);
  c.hidden = doc.value("hidden", c.hidden);
  c.temperature = doc.value("temperature", c.temperature);
  c.k_modes = doc.value("k_modes", c.k_modes);
  if (doc.contains("adam")) {
    const auto& a = doc["adam"];
    c.adam.lr = a.value("lr", c.adam.lr);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.seed = doc.value("seed", c.seed);
  if (c.epochs < 0 || c.batch < 1 || c.z_dim < 1 || c.critic_steps < 1 || c.k_modes < 1 || !(c.temperature > 0.0))
    throw Error("invalid_config", "invalid GAN configuration");
  return c;
}

// ---------------------------------------------------------------------------
// Training

namespace {

Mlp make_generator(const CtganConfig& cfg, const CtganLayout& layout, std::uint64_t seed) {
  std::vector<int> dims{cfg.z_dim + layout.cond_width};
  std::vector<Activation> acts;
  for (int h : cfg.hidden) {
    dims.push_back(h);
    acts.push_back(Activation::relu);
  }
  dims.push_back(layout.width);
  acts.push_back(Activation::linear);
  return mlp_init(dims, acts, seed);
}

Mlp make_critic(const CtganConfig& cfg, const CtganLayout& layout, std::uint64_t seed) {
  std::vector<int> dims{layout.width + layout.cond_width};
  std::vector<Activation> acts;
  for (int h : cfg.hidden) {
    dims.push_back(h);
    acts.push_back(Activation::relu);
  }
  dims.push_back(1);
  acts.push_back(Activation::linear);
  return mlp_init(dims, acts, seed);
}

struct GeneratorPass {
  ForwardCache cache;
  Eigen::MatrixXd output;  // activated rows
};

double gumbel(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  return -std::log(-std::log(u + 1e-20) + 1e-20);
}

// tanh on alpha slots, Gumbel-softmax on every block.
GeneratorPass run_generator(const CtganModel& m, const Eigen::MatrixXd& input, std::mt19937_64& rng) {
  GeneratorPass pass;
  pass.cache = forward(m.generator, input);
  const Eigen::MatrixXd& logits = pass.cache.output();
  pass.output = logits;
  for (const auto& s : m.layout.spans)
    if (s.numerical) pass.output.col(s.offset) = logits.col(s.offset).array().tanh().matrix();
  for (const auto& seg : m.layout.segments)
    for (Eigen::Index r = 0; r < logits.rows(); ++r)
      for (int j = 0; j < seg.width; ++j) pass.output(r, seg.offset + j) += gumbel(rng);
  softmax_segments(pass.output, m.layout.segments, m.config.temperature);
  return pass;
}

Eigen::MatrixXd concat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Eigen::MatrixXd sample_noise(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return z;
}

}  // namespace

CtganModel train_ctgan(const Dataset& rows, const CtganConfig& config) {
  if (rows.empty()) throw Error("empty_dataset", "cannot train the generator on zero rows");
  const auto& schema = rows.schema();
  CtganModel m;
  m.schema = schema;
  m.config = config;
  m.normalizers.resize(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].kind != ColumnKind::numerical) continue;
    const auto col = rows.values().col(static_cast<Eigen::Index>(c));
    m.normalizers[c] = fit_mode_normalizer(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                           config.k_modes);
  }
  m.layout = make_layout(schema, m.normalizers);
  m.frequencies = FrequencyTable::from(rows);
  m.generator = make_generator(config, m.layout, detail::mix_seed(config.seed, 1));
  m.critic = make_critic(config, m.layout, detail::mix_seed(config.seed, 2));

  std::mt19937_64 rng(detail::mix_seed(config.seed, 3));
  const Eigen::Index n = rows.rows();
  Eigen::MatrixXd data(n, m.layout.width);
  for (Eigen::Index r = 0; r < n; ++r) data.row(r) = encode_row(m.normalizers, m.layout, schema, rows.row(r), rng).transpose();

  // rows holding each (column, category)
  std::vector<std::vector<std::vector<Eigen::Index>>> by_category(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].kind != ColumnKind::categorical) continue;
    by_category[c].resize(schema[c].categories.size());
    for (Eigen::Index r = 0; r < n; ++r) by_category[c][static_cast<std::size_t>(rows.category(r, c))].push_back(r);
  }

  const int batch = static_cast<int>(std::min<Eigen::Index>(config.batch, n));
  const int steps_per_epoch = std::max(1, static_cast<int>(n / batch));
  const double inv_b = 1.0 / batch;
  AdamState opt_g(m.generator, config.adam);
  AdamState opt_c(m.critic, config.adam);
  std::uniform_int_distribution<Eigen::Index> any_row(0, n - 1);

  struct Conditions {
    Eigen::MatrixXd vec;
    std::vector<CondVector> draws;
  };
  auto draw_conditions = [&]() {
    Conditions out;
    out.vec = Eigen::MatrixXd::Zero(batch, m.layout.cond_width);
    for (int r = 0; r < batch; ++r) {
      auto cv = sample_cond_vector(schema, m.frequencies, rng);
      if (cv.column >= 0) out.vec.row(r) = cv.vec.transpose();
      out.draws.push_back(std::move(cv));
    }
    return out;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double sum_c = 0.0, sum_g = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      double loss_c = 0.0;
      for (int cs = 0; cs < config.critic_steps; ++cs) {
        const auto cond = draw_conditions();
        Eigen::MatrixXd real(batch, m.layout.width);
        for (int r = 0; r < batch; ++r) {
          const auto& cv = cond.draws[static_cast<std::size_t>(r)];
          Eigen::Index idx = 0;
          if (cv.column >= 0) {
            const auto& pool = by_category[static_cast<std::size_t>(cv.column)][static_cast<std::size_t>(cv.category)];
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            idx = pool[pick(rng)];
          } else {
            idx = any_row(rng);
          }
          real.row(r) = data.row(idx);
        }
        const auto gen = run_generator(m, concat(sample_noise(batch, config.z_dim, rng), cond.vec), rng);
        const Eigen::MatrixXd fake_in = concat(gen.output, cond.vec);
        const Eigen::MatrixXd real_in = concat(real, cond.vec);
        const auto fake_cache = forward(m.critic, fake_in);
        const auto real_cache = forward(m.critic, real_in);
        const auto gp = gradient_penalty(m.critic, real_in, fake_in, rng);
        loss_c = fake_cache.output().mean() - real_cache.output().mean() + config.gp_coeff * gp.value;

        auto grads = backward(m.critic, fake_cache, Eigen::MatrixXd::Constant(batch, 1, inv_b));
        grads.add(backward(m.critic, real_cache, Eigen::MatrixXd::Constant(batch, 1, -inv_b)));
        grads.add(gp.grads, config.gp_coeff);
        opt_c.step(m.critic, grads);
      }

      const auto cond = draw_conditions();
      const auto gen = run_generator(m, concat(sample_noise(batch, config.z_dim, rng), cond.vec), rng);
      const auto critic_cache = forward(m.critic, concat(gen.output, cond.vec));
      const auto critic_grads = backward(m.critic, critic_cache, Eigen::MatrixXd::Constant(batch, 1, -inv_b));
      const Eigen::MatrixXd d_out = critic_grads.input.leftCols(m.layout.width);

      const Eigen::MatrixXd& logits = gen.cache.output();
      Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(batch, m.layout.width);
      for (const auto& s : m.layout.spans)
        if (s.numerical)
          d_logits.col(s.offset) = (d_out.col(s.offset).array() * (1.0 - gen.output.col(s.offset).array().square())).matrix();
      for (const auto& seg : m.layout.segments) {
        const auto y = gen.output.middleCols(seg.offset, seg.width);
        const auto gy = d_out.middleCols(seg.offset, seg.width);
        const Eigen::VectorXd dots = (y.array() * gy.array()).rowwise().sum();
        d_logits.middleCols(seg.offset, seg.width) =
            (y.array() * (gy.colwise() - dots).array()).matrix() / config.temperature;
      }

      // cross-entropy between the conditioned block's logits and its category
      double ce = 0.0;
      for (int r = 0; r < batch; ++r) {
        const auto& cv = cond.draws[static_cast<std::size_t>(r)];
        if (cv.column < 0) continue;
        const auto& span = m.layout.spans[static_cast<std::size_t>(cv.column)];
        Eigen::RowVectorXd block = logits.row(r).segment(span.offset, span.width);
        const double mx = block.maxCoeff();
        Eigen::RowVectorXd p = (block.array() - mx).exp();
        const double z = p.sum();
        p /= z;
        ce += -(block(cv.category) - mx - std::log(z));
        p(cv.category) -= 1.0;
        d_logits.row(r).segment(span.offset, span.width) += inv_b * p;
      }
      ce *= inv_b;
      const double loss_g = -critic_cache.output().mean() + ce;

      if (!std::isfinite(loss_c) || !std::isfinite(loss_g)) {
        std::ostringstream msg;
        msg << "non-finite GAN loss at epoch " << epoch << ", step " << step << ": critic=" << loss_c
            << ", generator=" << loss_g;
        throw Error("non_finite_loss", msg.str());
      }
      const auto gen_grads = backward(m.generator, gen.cache, d_logits);
      opt_g.step(m.generator, gen_grads);
      sum_c += loss_c;
      sum_g += loss_g;
    }
    m.losses.push_back({epoch, sum_c / steps_per_epoch, sum_g / steps_per_epoch});
  }
  return m;
}

namespace {

Dataset sample_impl(const CtganModel& m, std::size_t n, std::uint64_t seed, int fixed_column, int fixed_category) {
  if (n == 0) throw Error("invalid_count", "sample count must be >= 1");
  std::mt19937_64 rng(seed);
  const int cw = m.layout.cond_width;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m.schema.size()));
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, m.config.batch));
  for (std::size_t start = 0; start < n; start += chunk) {
    const auto rows = static_cast<int>(std::min(chunk, n - start));
    Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(rows, cw);
    for (int r = 0; r < rows; ++r) {
      if (fixed_column >= 0) {
        cond(r, m.layout.cond_offsets[static_cast<std::size_t>(fixed_column)] + fixed_category) = 1.0;
        continue;
      }
      const auto cv = draw_condition(m.schema, m.frequencies, rng, [](double c) { return c; });
      if (cv.column >= 0) cond.row(r) = cv.vec.transpose();
    }
    const Eigen::MatrixXd logits = forward(m.generator, concat(sample_noise(rows, m.config.z_dim, rng), cond)).output();
    Eigen::MatrixXd hard = Eigen::MatrixXd::Zero(rows, m.layout.width);
    for (const auto& s : m.layout.spans)
      if (s.numerical) hard.col(s.offset) = logits.col(s.offset).array().tanh().matrix();
    for (const auto& seg : m.layout.segments) {
      for (int r = 0; r < rows; ++r) {
        int best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < seg.width; ++j) {
          const double v = logits(r, seg.offset + j) + gumbel(rng);
          if (v > best_v) {
            best_v = v;
            best = j;
          }
        }
        hard(r, seg.offset + best) = 1.0;
      }
    }
    for (int r = 0; r < rows; ++r)
      out.row(static_cast<Eigen::Index>(start) + r) =
          decode_row(m.normalizers, m.layout, m.schema, hard.row(r).transpose()).transpose();
  }
  return Dataset(m.schema, std::move(out));
}

}  // namespace

Dataset sample(const CtganModel& m, std::size_t n, std::uint64_t seed) { return sample_impl(m, n, seed, -1, -1); }

Dataset sample_conditioned(const CtganModel& m, std::size_t n, std::size_t column, int category, std::uint64_t seed) {
  if (column >= m.schema.size() || m.schema[column].kind != ColumnKind::categorical)
    throw Error("invalid_condition", "condition column must be categorical");
  if (category < 0 || category >= static_cast<int>(m.schema[column].categories.size()))
    throw Error("invalid_condition", "condition category out of range");
  return sample_impl(m, n, seed, static_cast<int>(column), category);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kBlobMagic[8] = {'L', 'M', 'T', 'E', 'B', 'L', 'O', 'B'};

json architecture(const Mlp& mlp) {
  json layers = json::array();
  for (const auto& l : mlp.layers) {
    std::string act = l.activation == Activation::relu   ? "relu"
                      : l.activation == Activation::tanh ? "tanh"
                      : l.activation == Activation::linear ? "linear"
                                                           : "softmax_block";
    layers.push_back({{"in", l.weight.rows()}, {"out", l.weight.cols()}, {"activation", act}});
  }
  return layers;
}

Mlp from_architecture(const json& layers) {
  Mlp mlp;
  for (const auto& j : layers) {
    DenseLayer l;
    l.weight = Eigen::MatrixXd::Zero(j.at("in").get<int>(), j.at("out").get<int>());
    l.bias = Eigen::RowVectorXd::Zero(j.at("out").get<int>());
    const auto act = j.at("activation").get<std::string>();
    l.activation = act == "relu" ? Activation::relu : act == "tanh" ? Activation::tanh : Activation::linear;
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

}  // namespace

void save_model(const CtganModel& model, const std::filesystem::path& json_path,
                const std::filesystem::path& blob_path) {
  json norms = json::array();
  for (std::size_t c = 0; c < model.schema.size(); ++c) {
    if (model.schema[c].kind != ColumnKind::numerical) {
      norms.push_back(nullptr);
      continue;
    }
    json modes = json::array();
    for (const auto& g : model.normalizers[c].modes)
      modes.push_back({{"weight", g.weight}, {"mean", g.mean}, {"stdev", g.stdev}});
    norms.push_back({{"modes", modes}, {"active", model.normalizers[c].active}});
  }
  json losses = json::array();
  for (const auto& l : model.losses) losses.push_back({l.epoch, l.critic, l.generator});
  const json doc{{"format", "lmte-ctgan/1"},
                 {"schema", model.schema.to_json()},
                 {"normalizers", norms},
                 {"layout_width", model.layout.width},
                 {"cond_width", model.layout.cond_width},
                 {"frequencies", model.frequencies.to_json()},
                 {"config", model.config.to_json()},
                 {"generator", architecture(model.generator)},
                 {"critic", architecture(model.critic)},
                 {"losses", losses}};
  std::ofstream js(json_path);
  if (!js) throw Error("io_error", "cannot write " + json_path.string());
  js << doc.dump(2) << "\n";

  std::vector<double> params = model.generator.flatten();
  const auto critic = model.critic.flatten();
  params.insert(params.end(), critic.begin(), critic.end());
  const std::string_view bytes(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  const std::uint64_t count = params.size();
  const std::uint64_t checksum = detail::fnv1a(bytes);
  std::ofstream bin(blob_path, std::ios::binary);
  if (!bin) throw Error("io_error", "cannot write " + blob_path.string());
  bin.write(kBlobMagic, sizeof kBlobMagic);
  bin.write(reinterpret_cast<const char*>(&count), sizeof count);
  bin.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CtganModel load_model(const std::filesystem::path& json_path, const std::filesystem::path& blob_path) {
  std::ifstream js(json_path);
  if (!js) throw Error("missing_file", "cannot open " + json_path.string());
  const json doc = json::parse(js);
  if (doc.value("format", std::string()) != "lmte-ctgan/1") throw Error("invalid_model", "unsupported model format");
  CtganModel m;
  m.schema = Schema::from_json(doc.at("schema"));
  m.normalizers.resize(m.schema.size());
  for (std::size_t c = 0; c < m.schema.size(); ++c) {
    const auto& j = doc.at("normalizers").at(c);
    if (j.is_null()) continue;
    for (const auto& g : j.at("modes"))
      m.normalizers[c].modes.push_back({g.at("weight").get<double>(), g.at("mean").get<double>(), g.at("stdev").get<double>()});
    m.normalizers[c].active = j.at("active").get<std::vector<int>>();
  }
  m.layout = make_layout(m.schema, m.normalizers);
  m.frequencies = FrequencyTable::from_json(doc.at("frequencies"));
  m.config = CtganConfig::from_json(doc.at("config"));
  m.generator = from_architecture(doc.at("generator"));
  m.critic = from_architecture(doc.at("critic"));
  for (const auto& l : doc.at("losses")) m.losses.push_back({l[0].get<int>(), l[1].get<double>(), l[2].get<double>()});

  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw Error("missing_file", "cannot open " + blob_path.string());
  char magic[8];
  std::uint64_t count = 0, checksum = 0;
  bin.read(magic, sizeof magic);
  bin.read(reinterpret_cast<char*>(&count), sizeof count);
  bin.read(reinterpret_cast<char*>(&checksum), sizeof checksum);
  if (!bin || std::memcmp(magic, kBlobMagic, sizeof magic) != 0) throw Error("invalid_model", "bad parameter blob header");
  const std::size_t expected = m.generator.parameter_count() + m.critic.parameter_count();
  if (count != expected) throw Error("invalid_model", "parameter blob length does not match the architecture");
  std::vector<double> params(count);
  bin.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!bin) throw Error("invalid_model", "truncated parameter blob");
  const std::string_view bytes(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  if (detail::fnv1a(bytes) != checksum) throw Error("invalid_model", "parameter blob checksum mismatch");
  const std::span<const double> all(params);
  m.generator.assign(all.first(m.generator.parameter_count()));
  m.critic.assign(all.subspan(m.generator.parameter_count()));
  return m;
}

}  // namespace lmte
