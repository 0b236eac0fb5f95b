#include "hcrl/mlp.hpp"

#include <cmath>

#include <fmt/format.h>

namespace hcrl {

Mlp::Mlp(std::vector<int> layer_sizes, OutputHead head)
    : layer_sizes_(std::move(layer_sizes)), head_(head) {
  if (layer_sizes_.size() < 2) throw ContractViolation("an Mlp needs at least input and output sizes");
  for (int s : layer_sizes_)
    if (s < 1) throw ContractViolation("Mlp layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l)
    layers_.push_back({Eigen::MatrixXd::Zero(layer_sizes_[l + 1], layer_sizes_[l]),
                       Eigen::VectorXd::Zero(layer_sizes_[l + 1])});
}

Mlp Mlp::initialized(std::vector<int> layer_sizes, OutputHead head, Rng& rng, double final_scale) {
  Mlp net(std::move(layer_sizes), head);
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    DenseLayer& layer = net.layers_[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols())) *
                         (l + 1 == net.layers_.size() ? final_scale : 1.0);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-bound, bound);
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& batch) const {
  if (batch.rows() != input_dim())
    throw DimensionMismatch(fmt::format("Mlp input has {} rows, expected {}", batch.rows(), input_dim()));
  Eigen::MatrixXd x = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * x;
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size())
      x = z.cwiseMax(0.0);
    else
      x = head_ == OutputHead::kTanh ? Eigen::MatrixXd(z.array().tanh()) : std::move(z);
  }
  return x;
}

ForwardPass Mlp::forward_pass(const Eigen::MatrixXd& batch) const {
  if (batch.rows() != input_dim())
    throw DimensionMismatch(fmt::format("Mlp input has {} rows, expected {}", batch.rows(), input_dim()));
  ForwardPass pass;
  pass.activations.reserve(layers_.size() + 1);
  pass.activations.push_back(batch);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * pass.activations.back();
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size())
      pass.activations.push_back(z.cwiseMax(0.0));
    else if (head_ == OutputHead::kTanh)
      pass.activations.push_back(z.array().tanh().matrix());
    else
      pass.activations.push_back(std::move(z));
  }
  return pass;
}

bool Mlp::all_finite() const {
  for (const auto& layer : layers_)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layer_sizes_ != b.layer_sizes_ || a.head_ != b.head_) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l)
    if (a.layers_[l].weight != b.layers_[l].weight || a.layers_[l].bias != b.layers_[l].bias)
      return false;
  return true;
}

MlpGradients backward(const Mlp& net, const ForwardPass& pass, const Eigen::MatrixXd& upstream) {
  const auto& layers = net.layers();
  if (pass.activations.size() != layers.size() + 1)
    throw DimensionMismatch("forward pass does not belong to this network");
  if (upstream.rows() != pass.output().rows() || upstream.cols() != pass.output().cols())
    throw DimensionMismatch(fmt::format("upstream gradient is {}x{}, output is {}x{}", upstream.rows(),
                                        upstream.cols(), pass.output().rows(), pass.output().cols()));

  MlpGradients grads;
  grads.layers.resize(layers.size());
  Eigen::MatrixXd delta;  // gradient w.r.t. the current layer's pre-activation
  if (net.head() == OutputHead::kTanh)
    delta = upstream.array() * (1.0 - pass.output().array().square());
  else
    delta = upstream;

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Eigen::MatrixXd& in = pass.activations[l];
    grads.layers[l].weight.noalias() = delta * in.transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    Eigen::MatrixXd back = layers[l].weight.transpose() * delta;
    if (l == 0) {
      grads.input = std::move(back);
    } else {
      // Rectifier derivative: positive output <=> positive pre-activation.
      delta = (in.array() > 0.0).select(back, 0.0);
    }
  }
  return grads;
}

AdamState::AdamState(const Mlp& net, double lr) : learning_rate(lr) {
  for (const auto& layer : net.layers()) {
    first_moment.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                            Eigen::VectorXd::Zero(layer.bias.size())});
    second_moment.push_back(first_moment.back());
  }
}

void adam_step(Mlp& net, const MlpGradients& grads, AdamState& opt) {
  auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || opt.first_moment.size() != layers.size())
    throw DimensionMismatch("gradient/optimizer layer count differs from the network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.layers[l].weight.rows() != layers[l].weight.rows() ||
        grads.layers[l].weight.cols() != layers[l].weight.cols() ||
        grads.layers[l].bias.size() != layers[l].bias.size())
      throw DimensionMismatch(fmt::format("gradient shape mismatch in layer {}", l));
    if (!grads.layers[l].weight.allFinite())
      throw NumericAbort(fmt::format("non-finite gradient in layer {} weights", l));
    if (!grads.layers[l].bias.allFinite())
      throw NumericAbort(fmt::format("non-finite gradient in layer {} biases", l));
  }

  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  const double step_size = opt.learning_rate / c1;
  const double sqrt_c2 = std::sqrt(c2);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    param.array() -= step_size * m.array() / (v.array().sqrt() / sqrt_c2 + opt.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.layers[l].weight, opt.first_moment[l].weight, opt.second_moment[l].weight);
    update(layers[l].bias, grads.layers[l].bias, opt.first_moment[l].bias, opt.second_moment[l].bias);
  }
}

void check_same_shape(const Mlp& a, const Mlp& b) {
  if (a.layer_sizes() != b.layer_sizes()) throw DimensionMismatch("networks have different layer sizes");
}

void polyak_update(Mlp& target, const Mlp& online, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ContractViolation(fmt::format("polyak rho {} outside [0, 1]", rho));
  check_same_shape(target, online);
  for (std::size_t l = 0; l < target.layers().size(); ++l) {
    auto& t = target.layers()[l];
    const auto& o = online.layers()[l];
    t.weight = rho * t.weight + (1.0 - rho) * o.weight;
    t.bias = rho * t.bias + (1.0 - rho) * o.bias;
  }
}

}  // namespace hcrl
