#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lmte/error.hpp"

namespace lmte {

enum class Activation { linear, relu, tanh, softmax_block };

/// Column range softmaxed independently by a softmax_block activation.
/// Columns outside every segment pass through unchanged.
struct Segment {
  int offset = 0;
  int width = 0;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
  Activation activation = Activation::linear;
  std::vector<Segment> segments;
};

/// Dense multilayer perceptron operating on row-major batches
/// (one sample per row). Double precision throughout.
struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.cols()); }
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> params);
};

/// Glorot-uniform weights, zero biases. `dims` has one more entry than
/// `activations`; `segments[i]` applies to softmax_block layer i.
Mlp mlp_init(std::span<const int> dims, std::span<const Activation> activations, std::uint64_t seed,
             const std::vector<std::vector<Segment>>& segments = {});

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // layer inputs h_{l-1}
  std::vector<Eigen::MatrixXd> pre;     // affine outputs a_l
  std::vector<Eigen::MatrixXd> post;    // activations h_l

  const Eigen::MatrixXd& output() const { return post.back(); }
};

ForwardCache forward(const Mlp& mlp, const Eigen::MatrixXd& batch);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::RowVectorXd> bias;
  Eigen::MatrixXd input;

  static MlpGradients zeros_like(const Mlp& mlp);
  /// this += scale * other (parameters only).
  void add(const MlpGradients& other, double scale = 1.0);
  std::vector<double> flatten() const;
};

/// Reverse-mode gradients of sum(output .* output_grad).
MlpGradients backward(const Mlp& mlp, const ForwardCache& cache, const Eigen::MatrixXd& output_grad);

Eigen::MatrixXd activate(Activation act, std::span<const Segment> segments, const Eigen::MatrixXd& pre);
Eigen::MatrixXd activation_backward(Activation act, std::span<const Segment> segments, const Eigen::MatrixXd& pre,
                                    const Eigen::MatrixXd& post, const Eigen::MatrixXd& grad_post);

/// Row-wise softmax of `logits / temperature` within each segment.
void softmax_segments(Eigen::MatrixXd& values, std::span<const Segment> segments, double temperature = 1.0);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const Mlp& mlp, AdamConfig config);

  const AdamConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return steps_; }

  /// One bias-corrected Adam update of `mlp` in place.
  void step(Mlp& mlp, const MlpGradients& grads);

 private:
  AdamConfig config_;
  long steps_ = 0;
  MlpGradients m_;
  MlpGradients v_;
};

inline void adam_step(AdamState& state, Mlp& mlp, const MlpGradients& grads) { state.step(mlp, grads); }

struct PenaltyResult {
  double value = 0.0;
  MlpGradients grads;  // d value / d critic parameters
};

/// mean_r (|d critic / d x|_2 - 1)^2 evaluated at the given rows, with
/// exact parameter gradients by double backpropagation. The critic must
/// have a scalar output and linear/relu/tanh activations.
PenaltyResult gradient_penalty_at(const Mlp& critic, const Eigen::MatrixXd& points);

/// Interpolates x = u real + (1 - u) fake with u ~ U(0,1) per row and
/// evaluates the penalty there.
PenaltyResult gradient_penalty(const Mlp& critic, const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake,
                               std::mt19937_64& rng);

}  // namespace lmte
