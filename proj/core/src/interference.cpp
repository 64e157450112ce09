#include "efc/interference.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iostream>

namespace efc {

void ClassPartition::validate(Index output_dim) const {
  std::vector<char> seen(std::size_t(output_dim), 0);
  auto mark = [&](const std::vector<int>& cs, const char* side) {
    for (int c : cs) {
      require(c >= 0 && c < output_dim, "partition: class out of range");
      if (seen[std::size_t(c)]++)
        throw ConfigError(std::string("partition: class listed twice (") + side + ")");
    }
  };
  mark(classes_a, "a");
  mark(classes_b, "b");
  for (Index c = 0; c < output_dim; ++c)
    require(seen[std::size_t(c)] == 1, "partition: output unit not covered");
}

bool ClassPartition::in_a(int c) const {
  return std::find(classes_a.begin(), classes_a.end(), c) != classes_a.end();
}

bool ClassPartition::in_b(int c) const {
  return std::find(classes_b.begin(), classes_b.end(), c) != classes_b.end();
}

namespace {

Vec softmax(const Vec& z) {
  Vec e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

int sample_label(const LossSpec& loss) {
  if (loss.label >= 0) return loss.label;
  Index hot;
  loss.target.maxCoeff(&hot);
  return int(hot);
}

}  // namespace

GradientDecomposition decompose(const NetworkParams& net, const ForwardTrace& trace,
                                const LossSpec& loss, const ClassPartition& part,
                                const TaskProjector* projector) {
  const Index d = trace.output().size();
  part.validate(d);
  const int label = sample_label(loss);
  if (part.in_a(label))
    throw ConfigError("decompose: sample label belongs to the earlier task");

  Vec unit_weight;
  if (loss.kind == LossKind::SoftmaxCrossEntropy) {
    unit_weight = softmax(trace.output());
    unit_weight[label] -= 1.0;
  } else {
    require(loss.target.size() == d, "decompose: target size mismatch");
    unit_weight = trace.output() - loss.target;
  }

  Vec seed_b = Vec::Zero(d);
  Vec seed_a = Vec::Zero(d);
  for (int c : part.classes_b) seed_b[c] = unit_weight[c];
  for (int c : part.classes_a) seed_a[c] = unit_weight[c];

  GradientDecomposition out;
  out.g_b = flatten_mats(net, backprop_output_seed(net, trace, seed_b));
  out.g_a_from_b = flatten_mats(net, backprop_output_seed(net, trace, seed_a));
  if (projector) {
    out.g_b_parallel = projector->apply(out.g_b);
    out.g_b_perp = out.g_b - out.g_b_parallel;
  }
  return out;
}

TaskProjector task_a_projector(const std::vector<Vec>& task_a_gradients,
                               double rank_tol) {
  require(!task_a_gradients.empty(), "task_a_projector: no gradients given");
  const Index n = task_a_gradients.front().size();
  Mat stacked(n, Index(task_a_gradients.size()));
  for (Index j = 0; j < stacked.cols(); ++j) {
    require(task_a_gradients[std::size_t(j)].size() == n,
            "task_a_projector: inconsistent gradient sizes");
    stacked.col(j) = task_a_gradients[std::size_t(j)];
  }

  TaskProjector proj;
  if (stacked.lpNorm<Eigen::Infinity>() == 0.0) {
    std::cerr << "task_a_projector: all sampled gradients vanish; "
                 "projector is empty\n";
    proj.basis = Mat(n, 0);
    return proj;
  }

  Eigen::BDCSVD<Mat> svd(stacked, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  Index rank = 0;
  while (rank < sv.size() && sv[rank] > rank_tol * sv[0]) ++rank;
  proj.basis = svd.matrixU().leftCols(rank);
  return proj;
}

CancellationReport cancellation_counterexample(const NetworkParams& net,
                                               const Dataset& data_b,
                                               const ClassPartition& part,
                                               LossKind kind) {
  data_b.validate();
  require(data_b.size() >= 2,
          "cancellation_counterexample: need at least two samples");

  std::vector<Vec> leak;
  leak.reserve(std::size_t(data_b.size()));
  for (Index s = 0; s < data_b.size(); ++s) {
    auto trace = forward(net, Vec(data_b.inputs.row(s).transpose()));
    auto spec = make_loss(kind, data_b.labels[s], data_b.num_classes);
    leak.push_back(decompose(net, trace, spec, part).g_a_from_b);
  }

  CancellationReport rep;
  const double m = double(leak.size());
  Vec mean = Vec::Zero(leak.front().size());
  for (const Vec& g : leak) mean += g;
  mean /= m;
  double var = 0.0;
  for (const Vec& g : leak) var += (g - mean).squaredNorm();
  rep.residual = std::sqrt(var / m);

  double best = -1.0;
  for (std::size_t i = 0; i < leak.size(); ++i) {
    for (std::size_t j = i + 1; j < leak.size(); ++j) {
      double gap = (leak[i] - leak[j]).norm();
      if (gap > best) {
        best = gap;
        rep.first = Index(i);
        rep.second = Index(j);
        double scale = std::max(leak[i].norm(), leak[j].norm());
        rep.pair_gap = scale > 0.0 ? gap / scale : 0.0;
      }
    }
  }
  rep.found = rep.pair_gap > 0.01;
  return rep;
}

}  // namespace efc
