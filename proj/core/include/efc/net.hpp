#pragma once

#include <cstdint>
#include <vector>

#include "efc/common.hpp"

namespace efc {

enum class Activation { Linear, ReLU, Softplus, Sigmoid, Tanh };

double act_value(Activation a, double x);
double act_deriv(Activation a, double x);  // ReLU derivative at 0 is 0
Vec act_value(Activation a, const Vec& x);
Vec act_deriv(Activation a, const Vec& x);

struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation act = Activation::Linear;
  bool bias = false;  // when set, the weight carries one extra column and the
                      // layer input is augmented with a fixed 1
  int weight_cols() const { return in_dim + (bias ? 1 : 0); }
};

// Weights only; a bias, when present, lives in the extra weight column.
// Flattened parameter order: layers in order, row-major within a layer
// (index = offset_i + row * weight_cols + col).
struct NetworkParams {
  std::vector<LayerSpec> layers;
  std::vector<Mat> weights;  // weights[i] is out_dim x weight_cols

  int num_layers() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return layers.front().in_dim; }
  int output_dim() const { return layers.back().out_dim; }
  Index num_params() const;
  Index param_offset(int layer) const;
  Vec flatten() const;
  void unflatten(const Vec& theta);
  void validate() const;  // shape chain across layers, weight dims
};

// Seeded He init for ReLU/Softplus layers, Xavier otherwise; bias columns 0.
NetworkParams make_network(const std::vector<LayerSpec>& layers, std::uint64_t seed);

struct ForwardTrace {
  Vec input;
  std::vector<Vec> pre_acts;         // a_i = W_i [r_{i-1}; 1]
  std::vector<Vec> acts;             // r_i = act(a_i)
  std::vector<Mat> local_jacobians;  // d r_i / d r_{i-1} (bias column dropped)
  const Vec& output() const { return acts.back(); }
};

ForwardTrace forward(const NetworkParams& net, const Vec& input);

// d r_L / d r_i for post-activation layer output i in [0, L-1]; identity for
// the last layer. Chains the cached local Jacobians.
Mat output_jacobian(const ForwardTrace& t, int from_layer);

// d r_L / d theta as a (output_dim x num_params) matrix in flatten() order.
Mat param_jacobian(const NetworkParams& net, const ForwardTrace& t);

enum class LossKind { SoftmaxCrossEntropy, SquaredError };

struct LossSpec {
  LossKind kind = LossKind::SoftmaxCrossEntropy;
  int label = -1;  // SoftmaxCrossEntropy class index
  Vec target;      // SquaredError target vector
};

double loss_value(const LossSpec& loss, const Vec& output);
Vec output_grad(const LossSpec& loss, const Vec& output);  // d loss / d output

struct LossGrad {
  double value = 0.0;
  std::vector<Mat> grads;  // same shapes as weights
};

// Backprop through the cached trace. Raises NumericError naming the first
// layer with a non-finite activation.
LossGrad loss_and_grad(const NetworkParams& net, const ForwardTrace& t,
                       const LossSpec& loss);

// Backprop of an arbitrary output-space vector: returns d(seed . r_L)/d theta.
std::vector<Mat> backprop_output_seed(const NetworkParams& net,
                                      const ForwardTrace& t, const Vec& seed);

Vec flatten_mats(const NetworkParams& net, const std::vector<Mat>& mats);
std::vector<Mat> unflatten_mats(const NetworkParams& net, const Vec& v);
std::vector<Mat> zeros_like(const NetworkParams& net);

}  // namespace efc
