#pragma once

#include <functional>
#include <vector>

#include "efc/fisher.hpp"

namespace efc {

struct ControllerConfig {
  double tau = 1.0;     // activity time constant
  double alpha = 0.01;  // controller leak
  double lambda = 0.1;  // target nudge strength
  double dt = 0.05;     // Euler step; must stay below tau
  int max_steps = 10000;
  double tol_r = 1e-5;  // tolerance on ||dr/dt||_inf
  double tol_u = 1e-5;  // tolerance on ||du/dt||_inf
  bool strong_target = false;  // aim at the label vector instead of a nudge
  double eps_logf = 1e-8;      // clamp inside logs of tiny activities

  void validate() const;
};

struct DynamicsState {
  Vec input;           // clamped input pattern
  std::vector<Vec> r;  // per-layer activities
  Vec u;               // shared controller, output-sized
};

// Raised when activity or control blows up; carries the last finite state.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, DynamicsState state, int step)
      : NumericError(what), last_state(std::move(state)), step(step) {}
  DynamicsState last_state;
  int step;
};

// Output target: the feedforward output nudged down the loss gradient, or the
// label vector itself in strong mode.
Vec make_target(const ForwardTrace& trace, const LossSpec& loss,
                const ControllerConfig& cfg);

// Per-layer controller read-out weights: transposed output Jacobians at the
// feedforward linearization.
std::vector<Mat> feedback_weights(const ForwardTrace& trace);

struct StepDeltas {
  double dr_inf = 0.0;  // ||dr/dt||_inf over layers
  double du_inf = 0.0;  // ||du/dt||_inf
};

// One explicit Euler step of
//   tau dr_i/dt = -r_i + exp(psi_i + gamma_i) .* act(W_i [r_{i-1}; 1])
//   du/dt       = -(r_L - target) - alpha u,     psi_i = Q_i u.
// `gamma` may be inactive (no anchor); `feedback` holds the Q_i.
StepDeltas dynamics_step(DynamicsState& state, const NetworkParams& net,
                         const GammaOperator& gamma,
                         const std::vector<Mat>& feedback, const Vec& target,
                         const ControllerConfig& cfg);

struct TrajectoryPoint {
  int step;
  double time;
  double dr_inf;
  double du_inf;
  double control_effort;
  double target_gap;  // ||r_L - target||_inf
};
using TrajectoryCallback = std::function<void(const TrajectoryPoint&)>;

struct EquilibriumResult {
  std::vector<Vec> r;
  Vec u;
  std::vector<Vec> psi;    // Q_i u at the settled controller
  std::vector<Vec> gamma;  // preservation signal at the settled activities
  double control_effort = 0.0;  // 0.5 sum_i ||psi_i||^2
  bool converged = false;
  int steps = 0;
};

// Integrate from the feedforward state until both residuals fall below
// tolerance or max_steps runs out. `anchor` may be null (no preservation).
// `fixed_target` overrides make_target (used by the gradient check).
EquilibriumResult run_to_equilibrium(const NetworkParams& net,
                                     const FisherAnchor* anchor, const Vec& input,
                                     const LossSpec& loss,
                                     const ControllerConfig& cfg,
                                     const Vec* fixed_target = nullptr,
                                     const TrajectoryCallback* trajectory = nullptr);

// Local plasticity at the settled state:
//   dW_i = lr * (r_i - act(W_i [r_{i-1}; 1])) [r_{i-1}; 1]^T.
std::vector<Mat> weight_update(const NetworkParams& net,
                               const EquilibriumResult& result, const Vec& input,
                               double lr);

struct GradientCheck {
  Vec analytic;
  Vec numeric;
  double max_rel_err = 0.0;  // ||analytic-numeric||_inf / (||numeric||_inf + eps)
  // Same comparison for the activity-weighted effort 0.5 sum r*.psi^2. The
  // shared controller distributes modulation along transposed Jacobians, which
  // is first-order optimal for the weighted effort; on deep nets the weighted
  // error shrinks with control strength while the unweighted one plateaus.
  Vec analytic_weighted;
  Vec numeric_weighted;
  double max_rel_err_weighted = 0.0;
  bool conclusive = false;  // false when any perturbed run failed to settle
};

// Compares the first-order control-effort gradient (evaluated at the settled
// state, including the preservation term) against central finite differences
// re-run against the base target. Diagnostic tool for tiny nets: refuses
// networks above 200 parameters. Positive activations (softplus/linear with
// positive drive) are assumed; clamped logs would otherwise blur the
// comparison. Exact for single-hidden-state-free nets (one layer) up to the
// controller leak alpha; depth introduces an activity-weighting mismatch that
// the weighted fields quantify.
GradientCheck control_effort_gradient_check(const NetworkParams& net,
                                            const FisherAnchor* anchor,
                                            const Vec& input, const LossSpec& loss,
                                            const ControllerConfig& cfg,
                                            double eps = 1e-4);

}  // namespace efc
