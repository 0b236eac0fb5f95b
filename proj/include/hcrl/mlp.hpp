#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hcrl/errors.hpp"
#include "hcrl/rng.hpp"

namespace hcrl {

enum class OutputHead { kLinear, kTanh };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Activations of one batched forward pass. Column j holds sample j.
/// activations[0] is the input, activations.back() the head output.
struct ForwardPass {
  std::vector<Eigen::MatrixXd> activations;

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

struct MlpGradients {
  std::vector<DenseLayer> layers;
  Eigen::MatrixXd input;  // d(output . upstream) / d(input), same shape as the input batch
};

/// Fully connected network: rectifier hidden layers, linear or tanh head.
class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network. layer_sizes = {input, hidden..., output}.
  Mlp(std::vector<int> layer_sizes, OutputHead head);

  /// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
  /// weights and biases; the last layer is further scaled by final_scale.
  static Mlp initialized(std::vector<int> layer_sizes, OutputHead head, Rng& rng,
                         double final_scale = 1.0);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  OutputHead head() const { return head_; }
  int input_dim() const { return layer_sizes_.front(); }
  int output_dim() const { return layer_sizes_.back(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& batch) const;
  ForwardPass forward_pass(const Eigen::MatrixXd& batch) const;

  bool all_finite() const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<int> layer_sizes_;
  OutputHead head_ = OutputHead::kLinear;
  std::vector<DenseLayer> layers_;
};

/// Reverse-mode gradients of sum(output .* upstream) with respect to every
/// parameter and the input batch.
MlpGradients backward(const Mlp& net, const ForwardPass& pass, const Eigen::MatrixXd& upstream);

struct AdamState {
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;
  long step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const Mlp& net, double lr);
};

/// Bias-corrected Adam update. Throws NumericAbort naming the offending
/// tensor when a gradient is non-finite; parameters are left untouched.
void adam_step(Mlp& net, const MlpGradients& grads, AdamState& opt);

/// target <- rho * target + (1 - rho) * online.
void polyak_update(Mlp& target, const Mlp& online, double rho);

/// Throws DimensionMismatch unless both networks share layer sizes.
void check_same_shape(const Mlp& a, const Mlp& b);

}  // namespace hcrl
