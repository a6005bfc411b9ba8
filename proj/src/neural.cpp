#include "lmte/neural.hpp"

#include <cmath>
#include <string>

namespace lmte {

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void Mlp::assign(std::span<const double> params) {
  if (params.size() != parameter_count())
    throw Error("shape_mismatch", "expected " + std::to_string(parameter_count()) + " parameters, got " +
                                      std::to_string(params.size()));
  std::size_t k = 0;
  for (auto& l : layers) {
    std::copy_n(params.data() + k, l.weight.size(), l.weight.data());
    k += static_cast<std::size_t>(l.weight.size());
    std::copy_n(params.data() + k, l.bias.size(), l.bias.data());
    k += static_cast<std::size_t>(l.bias.size());
  }
}

Mlp mlp_init(std::span<const int> dims, std::span<const Activation> activations, std::uint64_t seed,
             const std::vector<std::vector<Segment>>& segments) {
  if (activations.empty() || dims.size() != activations.size() + 1)
    throw Error("invalid_architecture", "need at least one layer and dims = activations + 1");
  for (int d : dims)
    if (d <= 0) throw Error("invalid_architecture", "layer dimensions must be positive");
  std::mt19937_64 rng(seed);
  Mlp mlp;
  for (std::size_t l = 0; l < activations.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index j = 0; j < layer.weight.size(); ++j) layer.weight.data()[j] = dist(rng);
    layer.bias = Eigen::RowVectorXd::Zero(fan_out);
    layer.activation = activations[l];
    if (l < segments.size()) layer.segments = segments[l];
    for (const auto& s : layer.segments)
      if (s.offset < 0 || s.width <= 0 || s.offset + s.width > fan_out)
        throw Error("invalid_architecture", "softmax segment exceeds layer width");
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

void softmax_segments(Eigen::MatrixXd& values, std::span<const Segment> segments, double temperature) {
  for (const auto& s : segments) {
    auto block = values.middleCols(s.offset, s.width);
    block /= temperature;
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      const double mx = block.row(r).maxCoeff();
      block.row(r) = (block.row(r).array() - mx).exp();
      block.row(r) /= block.row(r).sum();
    }
  }
}

Eigen::MatrixXd activate(Activation act, std::span<const Segment> segments, const Eigen::MatrixXd& pre) {
  switch (act) {
    case Activation::linear: return pre;
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::tanh: return pre.array().tanh().matrix();
    case Activation::softmax_block: {
      Eigen::MatrixXd out = pre;
      softmax_segments(out, segments);
      return out;
    }
  }
  return pre;
}

Eigen::MatrixXd activation_backward(Activation act, std::span<const Segment> segments, const Eigen::MatrixXd& pre,
                                    const Eigen::MatrixXd& post, const Eigen::MatrixXd& grad_post) {
  switch (act) {
    case Activation::linear: return grad_post;
    case Activation::relu: return (pre.array() > 0.0).select(grad_post, 0.0);
    case Activation::tanh: return (grad_post.array() * (1.0 - post.array().square())).matrix();
    case Activation::softmax_block: {
      Eigen::MatrixXd g = grad_post;
      for (const auto& s : segments) {
        const auto sm = post.middleCols(s.offset, s.width);
        const auto gp = grad_post.middleCols(s.offset, s.width);
        const Eigen::VectorXd dots = (sm.array() * gp.array()).rowwise().sum();
        g.middleCols(s.offset, s.width) = (sm.array() * (gp.colwise() - dots).array()).matrix();
      }
      return g;
    }
  }
  return grad_post;
}

ForwardCache forward(const Mlp& mlp, const Eigen::MatrixXd& batch) {
  if (mlp.layers.empty()) throw Error("invalid_architecture", "empty network");
  if (batch.cols() != mlp.input_dim())
    throw Error("width_mismatch", "batch width " + std::to_string(batch.cols()) + " != input dim " +
                                      std::to_string(mlp.input_dim()));
  ForwardCache cache;
  Eigen::MatrixXd h = batch;
  for (const auto& l : mlp.layers) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd a = h * l.weight;
    a.rowwise() += l.bias;
    h = activate(l.activation, l.segments, a);
    cache.pre.push_back(std::move(a));
    cache.post.push_back(h);
  }
  return cache;
}

MlpGradients MlpGradients::zeros_like(const Mlp& mlp) {
  MlpGradients g;
  for (const auto& l : mlp.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::RowVectorXd::Zero(l.bias.size()));
  }
  return g;
}

void MlpGradients::add(const MlpGradients& other, double scale) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += scale * other.weight[l];
    bias[l] += scale * other.bias[l];
  }
}

std::vector<double> MlpGradients::flatten() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.insert(out.end(), weight[l].data(), weight[l].data() + weight[l].size());
    out.insert(out.end(), bias[l].data(), bias[l].data() + bias[l].size());
  }
  return out;
}

MlpGradients backward(const Mlp& mlp, const ForwardCache& cache, const Eigen::MatrixXd& output_grad) {
  if (cache.post.size() != mlp.layers.size())
    throw Error("shape_mismatch", "forward cache does not match the network");
  if (output_grad.rows() != cache.output().rows() || output_grad.cols() != cache.output().cols())
    throw Error("shape_mismatch", "output gradient shape differs from the forward output");
  MlpGradients g = MlpGradients::zeros_like(mlp);
  Eigen::MatrixXd grad = output_grad;
  for (std::size_t i = mlp.layers.size(); i-- > 0;) {
    const auto& l = mlp.layers[i];
    const Eigen::MatrixXd delta = activation_backward(l.activation, l.segments, cache.pre[i], cache.post[i], grad);
    g.weight[i] = cache.inputs[i].transpose() * delta;
    g.bias[i] = delta.colwise().sum();
    grad = delta * l.weight.transpose();
  }
  g.input = std::move(grad);
  return g;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const Mlp& mlp, AdamConfig config)
    : config_(config), m_(MlpGradients::zeros_like(mlp)), v_(MlpGradients::zeros_like(mlp)) {}

void AdamState::step(Mlp& mlp, const MlpGradients& grads) {
  if (m_.weight.size() != mlp.layers.size() || grads.weight.size() != mlp.layers.size())
    throw Error("shape_mismatch", "optimizer state does not match the network");
  ++steps_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  };
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    update(mlp.layers[l].weight, m_.weight[l], v_.weight[l], grads.weight[l]);
    update(mlp.layers[l].bias, m_.bias[l], v_.bias[l], grads.bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Gradient penalty

namespace {

Eigen::MatrixXd first_derivative(Activation act, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  switch (act) {
    case Activation::linear: return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - post.array().square()).matrix();
    case Activation::softmax_block: break;
  }
  throw Error("unsupported_activation", "gradient penalty does not support softmax layers");
}

Eigen::MatrixXd second_derivative(Activation act, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  if (act == Activation::tanh) return (-2.0 * post.array() * (1.0 - post.array().square())).matrix();
  return Eigen::MatrixXd::Zero(pre.rows(), pre.cols());
}

}  // namespace

PenaltyResult gradient_penalty_at(const Mlp& critic, const Eigen::MatrixXd& points) {
  if (critic.output_dim() != 1) throw Error("invalid_architecture", "critic must have a scalar output");
  const std::size_t L = critic.layers.size();
  const auto B = static_cast<double>(points.rows());
  const ForwardCache cache = forward(critic, points);

  // Input-gradient pass: g_l = dD/dh_l, delta_l = g_l .* s'(a_l).
  std::vector<Eigen::MatrixXd> sprime(L), g(L + 1), delta(L);
  for (std::size_t l = 0; l < L; ++l)
    sprime[l] = first_derivative(critic.layers[l].activation, cache.pre[l], cache.post[l]);
  g[L] = Eigen::MatrixXd::Ones(points.rows(), 1);
  for (std::size_t l = L; l-- > 0;) {
    delta[l] = g[l + 1].cwiseProduct(sprime[l]);
    g[l] = delta[l] * critic.layers[l].weight.transpose();
  }
  const Eigen::MatrixXd& input_grad = g[0];
  const Eigen::VectorXd norms = input_grad.rowwise().norm();

  PenaltyResult res;
  res.value = (norms.array() - 1.0).square().mean();
  res.grads = MlpGradients::zeros_like(critic);

  // Reverse of the input-gradient pass.
  Eigen::MatrixXd gbar(points.rows(), points.cols());
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    const double nr = norms(r);
    const double coef = nr > 0.0 ? (2.0 / B) * (nr - 1.0) / nr : 0.0;
    gbar.row(r) = coef * input_grad.row(r);
  }
  std::vector<Eigen::MatrixXd> abar(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& W = critic.layers[l].weight;
    res.grads.weight[l] += gbar.transpose() * delta[l];
    const Eigen::MatrixXd dbar = gbar * W;
    abar[l] = dbar.cwiseProduct(g[l + 1])
                  .cwiseProduct(second_derivative(critic.layers[l].activation, cache.pre[l], cache.post[l]));
    gbar = dbar.cwiseProduct(sprime[l]);
  }
  // Reverse of the forward pass, fed by the a_l adjoints collected above.
  Eigen::MatrixXd a_adj = abar[L - 1];
  for (std::size_t l = L; l-- > 0;) {
    res.grads.weight[l] += cache.inputs[l].transpose() * a_adj;
    res.grads.bias[l] += a_adj.colwise().sum();
    if (l == 0) break;
    const Eigen::MatrixXd h_adj = a_adj * critic.layers[l].weight.transpose();
    a_adj = abar[l - 1] + h_adj.cwiseProduct(sprime[l - 1]);
  }
  return res;
}

PenaltyResult gradient_penalty(const Mlp& critic, const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake,
                               std::mt19937_64& rng) {
  if (real.cols() != fake.cols() || real.rows() != fake.rows())
    throw Error("shape_mismatch", "real and fake batches must have equal shapes");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd mixed(real.rows(), real.cols());
  for (Eigen::Index r = 0; r < real.rows(); ++r) {
    const double u = unif(rng);
    mixed.row(r) = u * real.row(r) + (1.0 - u) * fake.row(r);
  }
  return gradient_penalty_at(critic, mixed);
}

}  // namespace lmte
