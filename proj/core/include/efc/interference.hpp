#pragma once

// Shared-head gradient anatomy: splitting a training gradient into the part
// that serves the current task's classes and the part that leaks into an
// earlier task's output units, plus span/projection tools for quantifying
// what any fixed correction could remove.

#include <vector>

#include "efc/data.hpp"
#include "efc/net.hpp"

namespace efc {

struct ClassPartition {
  std::vector<int> classes_a;  // earlier-task output units
  std::vector<int> classes_b;  // current-task output units

  // Disjoint, in range, and jointly covering every output unit.
  void validate(Index output_dim) const;
  bool in_a(int c) const;
  bool in_b(int c) const;
};

// Orthonormal span of sampled gradient directions, applied implicitly.
struct TaskProjector {
  Mat basis;  // parameter_count x rank, orthonormal columns

  Index rank() const { return basis.cols(); }
  Vec apply(const Vec& v) const {
    if (basis.cols() == 0) return Vec::Zero(v.size());
    return basis * (basis.transpose() * v);
  }
};

struct GradientDecomposition {
  Vec g_b;         // current-task classes' share of the gradient
  Vec g_a_from_b;  // leakage into the earlier task's classes
  Vec g_b_parallel;  // projection of g_b onto the supplied span (else empty)
  Vec g_b_perp;      // g_b - g_b_parallel (else empty)
};

// Split the per-sample loss gradient by output unit: cross-entropy weights
// each unit's gradient by p_c - [c = label] (the earlier-task share carries
// plain softmax mass p_c); squared error weighs by the per-unit residual.
// The two parts always sum to the exact loss gradient. The sample's label
// must belong to classes_b.
GradientDecomposition decompose(const NetworkParams& net, const ForwardTrace& trace,
                                const LossSpec& loss, const ClassPartition& part,
                                const TaskProjector* projector = nullptr);

// Orthonormal basis of the span of sampled gradients (singular directions
// above rank_tol * largest singular value). All-zero input yields an empty
// projector with a warning.
TaskProjector task_a_projector(const std::vector<Vec>& task_a_gradients,
                               double rank_tol = 1e-8);

struct CancellationReport {
  Index first = -1;       // indices of the most-separated sample pair
  Index second = -1;
  double pair_gap = 0.0;  // ||g_i - g_j|| / max(||g_i||, ||g_j||)
  double residual = 0.0;  // RMS leakage left after the best additive correction
  bool found = false;     // pair_gap > 0.01
};

// Measures how sample-dependent the leakage gradient is across a batch: the
// best single correction vector is the mean, and the reported residual is the
// RMS deviation around it, which no weight-space constant can remove.
CancellationReport cancellation_counterexample(const NetworkParams& net,
                                               const Dataset& data_b,
                                               const ClassPartition& part,
                                               LossKind kind);

}  // namespace efc
