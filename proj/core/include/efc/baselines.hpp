#pragma once

// Backprop-family learners sharing one training-step interface with the
// control-based learner: plain SGD/Adam, diagonal and full quadratic
// penalties around a consolidated anchor, and path-integral importance (SI).

#include <optional>

#include "efc/data.hpp"
#include "efc/dynamics.hpp"
#include "efc/equilibrium.hpp"
#include "efc/fisher.hpp"

namespace efc {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vec m;  // first moment (Adam), lazily sized
  Vec v;  // second moment (Adam)
  long step = 0;

  // Parameter increment for one step on `grad`; advances internal state.
  Vec apply(const Vec& grad);
};

enum class RegularizerKind { None, EwcDiag, EwcFull, Si, Oewc };

struct RegularizerState {
  RegularizerKind kind = RegularizerKind::None;
  std::optional<FisherAnchor> anchor;  // reference weights + curvature
  double strength = 0.0;               // penalty weight
  Vec si_omega;                        // accumulated per-parameter importance
  Vec si_trajectory;                   // running sum of (-grad) . dtheta
  Vec si_task_start;                   // weights when the current task began
  double si_damping = 1e-3;
  double oewc_decay = 0.9;
};

// Gradient of the quadratic penalty (strength/2)(theta-theta*)^T M (theta-theta*)
// with M the anchored diagonal, the dense curvature, or the SI importance.
// Kind None (and SI before any consolidation) gives zeros.
Vec reg_gradient(const RegularizerState& state, const NetworkParams& params);

// Path-integral bookkeeping: every step adds (-grad) . dtheta; consolidation
// converts the accumulated trajectory into importance and re-anchors.
void si_accumulate(RegularizerState& state, const Vec& grad, const Vec& delta_theta);
void si_consolidate(RegularizerState& state, const NetworkParams& params,
                    double damping);

enum class LearnerKind { Sgd, Adam, Ewc, Oewc, Si, Fish, Efc, Cng };

struct Learner {
  LearnerKind kind = LearnerKind::Sgd;
  OptimizerState opt;
  RegularizerState reg;
  ControllerConfig controller;  // settle parameters for the control learner

  const FisherAnchor* preservation() const {
    return reg.anchor ? &*reg.anchor : nullptr;
  }
};

// Canonical wiring: Sgd uses plain SGD, every other kind routes through Adam
// (the control learner's pseudo-gradient included); `strength` is the penalty
// weight for the regularized kinds and the preservation gain for Efc.
Learner make_learner(LearnerKind kind, double learning_rate, double strength = 0.0);

struct StepMetrics {
  double loss = 0.0;      // mean task loss over the batch (penalty excluded)
  double accuracy = 0.0;  // argmax over the full head vs. label
};

// One optimizer step on a batch. Backprop learners add the penalty gradient
// to the task gradient; the control learner settles each sample and applies
// the local plasticity rule as a pseudo-gradient; the preconditioned learner
// averages per-sample curvature-corrected steps (falling back to plain
// gradient descent until an anchor exists).
StepMetrics train_step(Learner& learner, NetworkParams& params,
                       const Dataset& batch, LossKind kind);

}  // namespace efc
