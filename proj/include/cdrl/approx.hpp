#pragma once

// Function approximation: fully connected rectifier networks with hand-written
// reverse accumulation, Adam, and the quantile Huber loss.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdrl/dist.hpp"
#include "cdrl/rng.hpp"

namespace cdrl {

// Activations recorded by a forward pass, consumed by backward().
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer (column per sample)
  std::vector<Eigen::MatrixXd> preact;  // affine output of each layer
};

// Rectifier MLP. Parameters live in one contiguous buffer laid out layer by
// layer as [W (out x in, column-major), b (out)], so optimizers and finite
// difference checks see a flat vector.
class Mlp {
 public:
  Mlp() = default;
  // All-zero parameters.
  explicit Mlp(std::vector<int> widths);
  // Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
  Mlp(std::vector<int> widths, Rng& rng);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  std::size_t layer_count() const { return widths_.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  // Columns are samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, MlpTape* tape = nullptr) const;

  // Accumulates dL/dparams into grad (size parameter_count()) given dL/doutput.
  void backward(const MlpTape& tape, const Eigen::MatrixXd& output_grad, std::span<double> grad) const;

 private:
  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;  // start of each layer's W
  std::vector<double> params_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg);
};

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct LossReport {
  double loss = 0.0;
  std::vector<double> pred_grad;   // dL/dprediction
  std::vector<double> param_grad;  // filled by callers that backprop
};

// Huber function: u^2/2 inside [-kappa, kappa], kappa(|u| - kappa/2) outside.
double huber(double u, double kappa);

// Mean over target atoms j and predicted atoms i of
// |tau_i - 1{u_ij < 0}| * huber(u_ij) / kappa with u_ij = target_j - pred_i.
// Prediction atoms are positional: tau_i = (i + 1/2)/m regardless of order.
LossReport quantile_huber(std::span<const double> pred, std::span<const double> target, double kappa);
LossReport quantile_huber(const QuantileRep& pred, const QuantileRep& target, double kappa);

// Text checkpoint of named networks. Format:
//   cdrl-checkpoint v1
//   <count>
//   per network: "<name> <layers+1> <width_0> ... <width_L>" then one
//   parameter per line in %.17g.
void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, const Mlp*>& nets);
std::map<std::string, Mlp> load_checkpoint(const std::filesystem::path& path);

}  // namespace cdrl
