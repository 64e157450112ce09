#include "efc/fisher.hpp"

#include <fstream>

namespace efc {

void FisherAnchor::validate_against(const NetworkParams& net) const {
  require(ref.layers.size() == net.layers.size(), "anchor layer count mismatch");
  require(diag.size() == net.weights.size(), "anchor curvature layer count mismatch");
  for (std::size_t i = 0; i < diag.size(); ++i) {
    require(diag[i].rows() == net.weights[i].rows() &&
            diag[i].cols() == net.weights[i].cols(),
            "anchor curvature shape mismatch at layer " + std::to_string(i));
    require(ref.weights[i].rows() == net.weights[i].rows() &&
            ref.weights[i].cols() == net.weights[i].cols(),
            "anchor weight shape mismatch at layer " + std::to_string(i));
  }
}

namespace {

// Per-sample gradients in fixed chunks; merge order is sample order so the
// result is independent of the worker count.
template <typename PerSample>
void for_each_gradient(const NetworkParams& net, const Dataset& data,
                       LossKind kind, const PerSample& consume) {
  const Index m = data.size();
  constexpr Index kChunk = 32;
  std::vector<std::vector<Mat>> slot(std::min(kChunk, m));
  for (Index base = 0; base < m; base += kChunk) {
    const Index count = std::min(kChunk, m - base);
    parallel_for(static_cast<std::size_t>(count), [&](std::size_t s) {
      const Index i = base + Index(s);
      auto trace = forward(net, data.inputs.row(i).transpose());
      auto lg = loss_and_grad(net, trace,
                              make_loss(kind, data.labels[i], data.num_classes));
      slot[s] = std::move(lg.grads);
    });
    for (Index s = 0; s < count; ++s) consume(slot[s]);
  }
}

}  // namespace

std::vector<Mat> fisher_diag(const NetworkParams& net, const Dataset& data,
                             LossKind kind) {
  net.validate();
  data.validate();
  require(data.size() > 0, "fisher_diag: empty dataset");
  auto acc = zeros_like(net);
  for_each_gradient(net, data, kind, [&](const std::vector<Mat>& grads) {
    for (std::size_t l = 0; l < acc.size(); ++l)
      acc[l].array() += grads[l].array().square();
  });
  for (auto& m : acc) m /= double(data.size());
  return acc;
}

Mat fisher_full(const NetworkParams& net, const Dataset& data, LossKind kind) {
  net.validate();
  data.validate();
  require(data.size() > 0, "fisher_full: empty dataset");
  const Index n = net.num_params();
  require(n <= kFullFisherParamCap,
          "fisher_full: " + std::to_string(n) + " parameters exceeds the dense cap of " +
          std::to_string(kFullFisherParamCap));
  Mat f = Mat::Zero(n, n);
  const double w = 1.0 / double(data.size());
  for_each_gradient(net, data, kind, [&](const std::vector<Mat>& grads) {
    Vec g = flatten_mats(net, grads);
    f.selfadjointView<Eigen::Lower>().rankUpdate(g, w);
  });
  return f.selfadjointView<Eigen::Lower>();
}

GammaOperator::GammaOperator(const FisherAnchor& anchor, const NetworkParams& net)
    : beta_(anchor.beta), cap_(anchor.gamma_cap) {
  anchor.validate_against(net);
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    scaled_drift_.push_back(
        anchor.diag[i].cwiseProduct(net.weights[i] - anchor.ref.weights[i]));
    has_bias_.push_back(net.layers[i].bias);
  }
}

Vec GammaOperator::layer(int i, const Vec& presyn) const {
  const Mat& m = scaled_drift_[std::size_t(i)];
  Vec out;
  if (!has_bias_[std::size_t(i)])
    out = -beta_ * (m * presyn);
  else
    out = -beta_ * (m.leftCols(presyn.size()) * presyn + m.col(presyn.size()));
  if (std::isfinite(cap_)) out = out.cwiseMax(-cap_).cwiseMin(cap_);
  return out;
}

std::vector<Vec> GammaOperator::all(const Vec& input,
                                    const std::vector<Vec>& acts) const {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < scaled_drift_.size(); ++i)
    out.push_back(layer(int(i), i == 0 ? input : acts[i - 1]));
  return out;
}

std::vector<Vec> gamma_signal(const FisherAnchor& anchor, const NetworkParams& net,
                              const ForwardTrace& trace) {
  GammaOperator op(anchor, net);
  std::vector<Vec> acts(trace.acts.begin(), trace.acts.end() - 1);
  return op.all(trace.input, acts);
}

FisherAnchor snapshot_anchor(const NetworkParams& net, const Dataset& data,
                             LossKind kind, double beta, bool with_full,
                             const FisherAnchor* prev, double decay) {
  FisherAnchor anchor;
  anchor.ref = net;
  anchor.beta = beta;
  anchor.diag = fisher_diag(net, data, kind);
  if (prev) {
    prev->validate_against(net);
    for (std::size_t i = 0; i < anchor.diag.size(); ++i)
      anchor.diag[i] += decay * prev->diag[i];
  }
  if (with_full) {
    anchor.full = fisher_full(net, data, kind);
    if (prev && prev->has_full()) *anchor.full += decay * *prev->full;
  }
  return anchor;
}

namespace {
template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(path + ": truncated anchor file");
  return v;
}

void put_mat(std::ofstream& out, const Mat& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
}

void get_mat(std::ifstream& in, const std::string& path, Mat& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
}
}  // namespace

void save_anchor(const std::string& path, const FisherAnchor& anchor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write("EFCA", 4);
  put<std::uint32_t>(out, 2);
  put(out, anchor.beta);
  put(out, anchor.gamma_cap);
  put<std::int32_t>(out, static_cast<std::int32_t>(anchor.ref.layers.size()));
  for (const auto& s : anchor.ref.layers) {
    put<std::int32_t>(out, s.in_dim);
    put<std::int32_t>(out, s.out_dim);
    put<std::int32_t>(out, static_cast<std::int32_t>(s.act));
    put<std::int32_t>(out, s.bias ? 1 : 0);
  }
  for (const auto& w : anchor.ref.weights) put_mat(out, w);
  for (const auto& d : anchor.diag) put_mat(out, d);
  put<std::int32_t>(out, anchor.has_full() ? 1 : 0);
  if (anchor.has_full()) {
    put<std::int64_t>(out, anchor.full->rows());
    put_mat(out, *anchor.full);
  }
  if (!out) throw DataError("short write to " + path);
}

FisherAnchor load_anchor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EFCA")
    throw DataError(path + ": bad magic at byte offset 0, expected EFCA");
  auto version = get<std::uint32_t>(in, path);
  if (version != 1 && version != 2)
    throw DataError(path + ": unsupported anchor version");
  FisherAnchor anchor;
  anchor.beta = get<double>(in, path);
  if (version >= 2) anchor.gamma_cap = get<double>(in, path);
  auto layer_count = get<std::int32_t>(in, path);
  if (layer_count <= 0) throw DataError(path + ": bad layer count");
  for (std::int32_t i = 0; i < layer_count; ++i) {
    LayerSpec s;
    s.in_dim = get<std::int32_t>(in, path);
    s.out_dim = get<std::int32_t>(in, path);
    s.act = static_cast<Activation>(get<std::int32_t>(in, path));
    s.bias = get<std::int32_t>(in, path) != 0;
    anchor.ref.layers.push_back(s);
  }
  for (const auto& s : anchor.ref.layers) {
    Mat w(s.out_dim, s.weight_cols());
    get_mat(in, path, w);
    anchor.ref.weights.push_back(std::move(w));
  }
  for (const auto& s : anchor.ref.layers) {
    Mat d(s.out_dim, s.weight_cols());
    get_mat(in, path, d);
    anchor.diag.push_back(std::move(d));
  }
  if (get<std::int32_t>(in, path) != 0) {
    auto n = get<std::int64_t>(in, path);
    Mat f(n, n);
    get_mat(in, path, f);
    anchor.full = std::move(f);
  }
  anchor.ref.validate();
  return anchor;
}

}  // namespace efc
