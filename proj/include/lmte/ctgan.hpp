#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "lmte/neural.hpp"
#include "lmte/tabular.hpp"

namespace lmte {

// ---------------------------------------------------------------------------
// Mode-specific normalization

struct GaussianMode {
  double weight = 0.0;
  double mean = 0.0;
  double stdev = 1.0;
};

inline constexpr double kModeWeightFloor = 0.005;
inline constexpr double kMinModeStdev = 1e-6;

/// 1-D Gaussian mixture for one numerical column. Only modes with weight
/// >= kModeWeightFloor are active; their weights are renormalized.
struct ModeNormalizer {
  std::vector<GaussianMode> modes;
  std::vector<int> active;                   // indices into modes
  std::vector<double> log_likelihood_trace;  // one entry per EM iteration

  int n_active() const { return static_cast<int>(active.size()); }
  /// Log of weight * N(x; mean, stdev) for each active mode.
  std::vector<double> active_log_densities(double x) const;
};

/// Fits mixtures of 1..k_modes components (k capped at the number of
/// distinct values) and keeps the one with the lowest BIC. Each fit is EM
/// with quantile initialization, stopping after 100 iterations or when the
/// log-likelihood changes by less than 1e-8; the trace is the kept fit's.
ModeNormalizer fit_mode_normalizer(std::span<const double> values, int k_modes = 5);

// ---------------------------------------------------------------------------
// Encoded row layout

/// Numerical columns occupy [alpha, mode one-hot...]; categorical columns
/// their one-hot block. The conditional vector concatenates the one-hot
/// blocks of the categorical columns in schema order.
struct CtganLayout {
  struct Span {
    std::size_t column = 0;
    bool numerical = true;
    int offset = 0;
    int width = 0;
  };
  std::vector<Span> spans;        // one per schema column
  std::vector<Segment> segments;  // softmax blocks (modes and categories)
  int width = 0;
  std::vector<int> cond_offsets;  // per schema column, -1 when numerical
  int cond_width = 0;
};

/// `normalizers` is indexed by schema column; entries for categorical
/// columns are ignored.
CtganLayout make_layout(const Schema& schema, const std::vector<ModeNormalizer>& normalizers);

/// Samples a mode m with probability proportional to w_m N(x; mu_m, s_m) and
/// emits alpha = clamp((x - mu_m) / (4 s_m), -1, 1) followed by one-hot(m).
Eigen::VectorXd encode_row(const std::vector<ModeNormalizer>& normalizers, const CtganLayout& layout,
                           const Schema& schema, const Row& row, std::mt19937_64& rng);
/// x = alpha * 4 s_m + mu_m with m the argmax mode; categories by argmax.
Row decode_row(const std::vector<ModeNormalizer>& normalizers, const CtganLayout& layout, const Schema& schema,
               const Eigen::Ref<const Eigen::VectorXd>& encoded);

// ---------------------------------------------------------------------------
// Conditional vectors

struct FrequencyTable {
  std::vector<std::vector<double>> counts;  // per schema column; empty for numerical

  static FrequencyTable from(const Dataset& data);
  json to_json() const;
  static FrequencyTable from_json(const json& doc);
};

struct CondVector {
  int column = -1;  // -1 when the schema has no categorical column
  int category = -1;
  Eigen::VectorXd vec;
};

/// Training-by-sampling: a categorical column uniformly, then a category
/// with probability proportional to log(1 + count).
CondVector sample_cond_vector(const Schema& schema, const FrequencyTable& freq, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Model

struct CtganConfig {
  int epochs = 300;
  int batch = 50;
  int z_dim = 32;
  int critic_steps = 1;
  double gp_coeff = 10.0;
  std::vector<int> hidden{64, 64};
  double temperature = 0.2;
  int k_modes = 5;
  AdamConfig adam{.lr = 1e-3};
  std::uint64_t seed = 0;

  json to_json() const;
  static CtganConfig from_json(const json& doc);
};

struct EpochLoss {
  int epoch = 0;
  double critic = 0.0;
  double generator = 0.0;
};

struct CtganModel {
  Schema schema;
  std::vector<ModeNormalizer> normalizers;
  CtganLayout layout;
  FrequencyTable frequencies;
  Mlp generator;  // linear output: alpha slots go through tanh, blocks through softmax
  Mlp critic;
  CtganConfig config;
  std::vector<EpochLoss> losses;
};

/// WGAN-GP training with conditional generation. Throws
/// Error("non_finite_loss") with epoch/step diagnostics on divergence.
CtganModel train_ctgan(const Dataset& rows, const CtganConfig& config);

/// Draws n rows; blocks are hardened by argmax of Gumbel-perturbed logits,
/// conditions follow the empirical category frequencies.
Dataset sample(const CtganModel& model, std::size_t n, std::uint64_t seed);
/// Same, with every row conditioned on one category of a categorical column.
Dataset sample_conditioned(const CtganModel& model, std::size_t n, std::size_t column, int category,
                           std::uint64_t seed);

/// JSON document (normalizers, layout, config) plus a flat parameter blob
/// with a magic/length/checksum header.
void save_model(const CtganModel& model, const std::filesystem::path& json_path,
                const std::filesystem::path& blob_path);
CtganModel load_model(const std::filesystem::path& json_path, const std::filesystem::path& blob_path);

}  // namespace lmte
