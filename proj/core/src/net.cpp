#include "efc/net.hpp"

#include <cmath>
#include <random>

namespace efc {

double act_value(Activation a, double x) {
  switch (a) {
    case Activation::Linear: return x;
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Softplus:
      if (x > 30.0) return x;
      if (x < -30.0) return std::exp(x);
      return std::log1p(std::exp(x));
    case Activation::Sigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      { double e = std::exp(x); return e / (1.0 + e); }
    case Activation::Tanh: return std::tanh(x);
  }
  throw ConfigError("unknown activation");
}

double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::Linear: return 1.0;
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return act_value(Activation::Sigmoid, x);
    case Activation::Sigmoid: {
      double s = act_value(Activation::Sigmoid, x);
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  throw ConfigError("unknown activation");
}

Vec act_value(Activation a, const Vec& x) {
  Vec out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = act_value(a, x[i]);
  return out;
}

Vec act_deriv(Activation a, const Vec& x) {
  Vec out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = act_deriv(a, x[i]);
  return out;
}

Index NetworkParams::num_params() const {
  Index n = 0;
  for (const auto& s : layers) n += Index(s.out_dim) * s.weight_cols();
  return n;
}

Index NetworkParams::param_offset(int layer) const {
  Index n = 0;
  for (int i = 0; i < layer; ++i) n += Index(layers[i].out_dim) * layers[i].weight_cols();
  return n;
}

Vec NetworkParams::flatten() const {
  Vec theta(num_params());
  Index p = 0;
  for (const auto& w : weights)
    for (Index k = 0; k < w.rows(); ++k)
      for (Index j = 0; j < w.cols(); ++j) theta[p++] = w(k, j);
  return theta;
}

void NetworkParams::unflatten(const Vec& theta) {
  require(theta.size() == num_params(), "unflatten: parameter vector has size " +
          std::to_string(theta.size()) + ", network has " + std::to_string(num_params()));
  Index p = 0;
  for (auto& w : weights)
    for (Index k = 0; k < w.rows(); ++k)
      for (Index j = 0; j < w.cols(); ++j) w(k, j) = theta[p++];
}

void NetworkParams::validate() const {
  require(!layers.empty(), "network has no layers");
  require(layers.size() == weights.size(), "layer/weight count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& s = layers[i];
    require(s.in_dim > 0 && s.out_dim > 0,
            "layer " + std::to_string(i) + ": dims must be positive");
    require(weights[i].rows() == s.out_dim && weights[i].cols() == s.weight_cols(),
            "layer " + std::to_string(i) + ": weight is " +
            std::to_string(weights[i].rows()) + "x" + std::to_string(weights[i].cols()) +
            ", spec wants " + std::to_string(s.out_dim) + "x" + std::to_string(s.weight_cols()));
    if (i > 0)
      require(s.in_dim == layers[i - 1].out_dim,
              "layer " + std::to_string(i) + ": in_dim " + std::to_string(s.in_dim) +
              " does not match previous out_dim " + std::to_string(layers[i - 1].out_dim));
  }
}

NetworkParams make_network(const std::vector<LayerSpec>& layers, std::uint64_t seed) {
  NetworkParams net;
  net.layers = layers;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& s : layers) {
    double scale;
    if (s.act == Activation::ReLU || s.act == Activation::Softplus)
      scale = std::sqrt(2.0 / s.in_dim);
    else
      scale = std::sqrt(2.0 / (s.in_dim + s.out_dim));
    Mat w(s.out_dim, s.weight_cols());
    for (Index k = 0; k < w.rows(); ++k)
      for (Index j = 0; j < w.cols(); ++j)
        w(k, j) = (s.bias && j == s.in_dim) ? 0.0 : scale * normal(rng);
    net.weights.push_back(std::move(w));
  }
  net.validate();
  return net;
}

namespace {
Vec augmented(const Vec& r, const LayerSpec& s) {
  if (!s.bias) return r;
  Vec out(r.size() + 1);
  out.head(r.size()) = r;
  out[r.size()] = 1.0;
  return out;
}
}  // namespace

ForwardTrace forward(const NetworkParams& net, const Vec& input) {
  net.validate();
  require(input.size() == net.input_dim(),
          "forward: input has size " + std::to_string(input.size()) +
          ", layer 0 expects " + std::to_string(net.input_dim()));
  ForwardTrace t;
  t.input = input;
  Vec r = input;
  for (int i = 0; i < net.num_layers(); ++i) {
    const auto& s = net.layers[i];
    Vec a = net.weights[i] * augmented(r, s);
    Vec d = act_deriv(s.act, a);
    t.local_jacobians.push_back(d.asDiagonal() * net.weights[i].leftCols(s.in_dim));
    r = act_value(s.act, a);
    t.pre_acts.push_back(std::move(a));
    t.acts.push_back(r);
  }
  return t;
}

Mat output_jacobian(const ForwardTrace& t, int from_layer) {
  int L = static_cast<int>(t.acts.size());
  require(from_layer >= 0 && from_layer < L,
          "output_jacobian: layer " + std::to_string(from_layer) + " out of range");
  Mat j = Mat::Identity(t.acts[from_layer].size(), t.acts[from_layer].size());
  for (int k = from_layer + 1; k < L; ++k) j = t.local_jacobians[k] * j;
  return j;
}

Mat param_jacobian(const NetworkParams& net, const ForwardTrace& t) {
  const Index n = net.num_params();
  const Index d_out = net.output_dim();
  Mat jp = Mat::Zero(d_out, n);
  Index off = 0;
  for (int i = 0; i < net.num_layers(); ++i) {
    const auto& s = net.layers[i];
    // d r_L / d a_i, columns scaled by the activation slope
    Mat sens = output_jacobian(t, i) * act_deriv(s.act, t.pre_acts[i]).asDiagonal();
    Vec r_in = augmented(i == 0 ? t.input : t.acts[i - 1], s);
    for (int k = 0; k < s.out_dim; ++k)
      for (int j = 0; j < s.weight_cols(); ++j)
        jp.col(off + Index(k) * s.weight_cols() + j) = sens.col(k) * r_in[j];
    off += Index(s.out_dim) * s.weight_cols();
  }
  return jp;
}

double loss_value(const LossSpec& loss, const Vec& output) {
  switch (loss.kind) {
    case LossKind::SoftmaxCrossEntropy: {
      require(loss.label >= 0 && loss.label < output.size(),
              "loss: label " + std::to_string(loss.label) + " out of range for " +
              std::to_string(output.size()) + " outputs");
      double m = output.maxCoeff();
      double lse = m + std::log((output.array() - m).exp().sum());
      return lse - output[loss.label];
    }
    case LossKind::SquaredError:
      require(loss.target.size() == output.size(),
              "loss: target size " + std::to_string(loss.target.size()) +
              " does not match output size " + std::to_string(output.size()));
      return 0.5 * (output - loss.target).squaredNorm();
  }
  throw ConfigError("unknown loss kind");
}

Vec output_grad(const LossSpec& loss, const Vec& output) {
  switch (loss.kind) {
    case LossKind::SoftmaxCrossEntropy: {
      require(loss.label >= 0 && loss.label < output.size(),
              "loss: label " + std::to_string(loss.label) + " out of range for " +
              std::to_string(output.size()) + " outputs");
      double m = output.maxCoeff();
      Vec p = (output.array() - m).exp();
      p /= p.sum();
      p[loss.label] -= 1.0;
      return p;
    }
    case LossKind::SquaredError:
      require(loss.target.size() == output.size(),
              "loss: target size " + std::to_string(loss.target.size()) +
              " does not match output size " + std::to_string(output.size()));
      return output - loss.target;
  }
  throw ConfigError("unknown loss kind");
}

std::vector<Mat> backprop_output_seed(const NetworkParams& net,
                                      const ForwardTrace& t, const Vec& seed) {
  require(seed.size() == net.output_dim(), "backprop seed size mismatch");
  std::vector<Mat> grads(net.num_layers());
  Vec db = seed;  // d(seed . r_L) / d r_i
  for (int i = net.num_layers() - 1; i >= 0; --i) {
    const auto& s = net.layers[i];
    Vec da = db.cwiseProduct(act_deriv(s.act, t.pre_acts[i]));
    Vec r_in = augmented(i == 0 ? t.input : t.acts[i - 1], s);
    grads[i] = da * r_in.transpose();
    if (i > 0) db = net.weights[i].leftCols(s.in_dim).transpose() * da;
  }
  return grads;
}

LossGrad loss_and_grad(const NetworkParams& net, const ForwardTrace& t,
                       const LossSpec& loss) {
  for (int i = 0; i < net.num_layers(); ++i)
    if (!t.acts[i].allFinite() || !t.pre_acts[i].allFinite())
      throw NumericError("non-finite activation at layer " + std::to_string(i));
  LossGrad out;
  out.value = loss_value(loss, t.output());
  out.grads = backprop_output_seed(net, t, output_grad(loss, t.output()));
  return out;
}

Vec flatten_mats(const NetworkParams& net, const std::vector<Mat>& mats) {
  require(mats.size() == net.weights.size(), "flatten_mats: layer count mismatch");
  Vec v(net.num_params());
  Index p = 0;
  for (std::size_t i = 0; i < mats.size(); ++i) {
    require(mats[i].rows() == net.weights[i].rows() &&
            mats[i].cols() == net.weights[i].cols(),
            "flatten_mats: shape mismatch at layer " + std::to_string(i));
    for (Index k = 0; k < mats[i].rows(); ++k)
      for (Index j = 0; j < mats[i].cols(); ++j) v[p++] = mats[i](k, j);
  }
  return v;
}

std::vector<Mat> unflatten_mats(const NetworkParams& net, const Vec& v) {
  require(v.size() == net.num_params(), "unflatten_mats: size mismatch");
  std::vector<Mat> mats;
  Index p = 0;
  for (const auto& w : net.weights) {
    Mat m(w.rows(), w.cols());
    for (Index k = 0; k < m.rows(); ++k)
      for (Index j = 0; j < m.cols(); ++j) m(k, j) = v[p++];
    mats.push_back(std::move(m));
  }
  return mats;
}

std::vector<Mat> zeros_like(const NetworkParams& net) {
  std::vector<Mat> mats;
  for (const auto& w : net.weights) mats.push_back(Mat::Zero(w.rows(), w.cols()));
  return mats;
}

}  // namespace efc
