#include "efc/baselines.hpp"

#include <cmath>

namespace efc {

Vec OptimizerState::apply(const Vec& grad) {
  if (kind == OptimizerKind::Sgd) return -learning_rate * grad;

  if (m.size() != grad.size()) {
    m = Vec::Zero(grad.size());
    v = Vec::Zero(grad.size());
    step = 0;
  }
  ++step;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(beta1, double(step));
  double bc2 = 1.0 - std::pow(beta2, double(step));
  Vec m_hat = m / bc1;
  Vec v_hat = v / bc2;
  return (-learning_rate * m_hat.array() / (v_hat.array().sqrt() + epsilon))
      .matrix();
}

Vec reg_gradient(const RegularizerState& state, const NetworkParams& params) {
  const Index n = params.num_params();
  if (state.kind == RegularizerKind::None || state.strength == 0.0)
    return Vec::Zero(n);

  if (state.kind == RegularizerKind::Si) {
    if (!state.anchor || state.si_omega.size() != n) return Vec::Zero(n);
    Vec drift = params.flatten() - state.anchor->ref.flatten();
    return state.strength * state.si_omega.cwiseProduct(drift);
  }

  if (!state.anchor)
    throw ConfigError("reg_gradient: penalty requested without an anchor");
  state.anchor->validate_against(params);
  Vec drift = params.flatten() - state.anchor->ref.flatten();

  switch (state.kind) {
    case RegularizerKind::EwcDiag:
    case RegularizerKind::Oewc: {
      Vec d = flatten_mats(params, state.anchor->diag);
      return state.strength * d.cwiseProduct(drift);
    }
    case RegularizerKind::EwcFull: {
      if (!state.anchor->has_full())
        throw ConfigError(
            "reg_gradient: full-curvature penalty needs a dense anchor");
      return state.strength * (*state.anchor->full * drift);
    }
    default:
      return Vec::Zero(n);
  }
}

void si_accumulate(RegularizerState& state, const Vec& grad,
                   const Vec& delta_theta) {
  if (grad.size() != delta_theta.size())
    throw ConfigError("si_accumulate: gradient/step size mismatch");
  if (state.si_trajectory.size() != grad.size())
    state.si_trajectory = Vec::Zero(grad.size());
  state.si_trajectory -= grad.cwiseProduct(delta_theta);
}

void si_consolidate(RegularizerState& state, const NetworkParams& params,
                    double damping) {
  const Index n = params.num_params();
  Vec theta = params.flatten();
  Vec prev = state.anchor           ? state.anchor->ref.flatten()
             : state.si_task_start.size() == n ? state.si_task_start
                                               : theta;
  if (state.si_omega.size() != n) state.si_omega = Vec::Zero(n);
  if (state.si_trajectory.size() == n) {
    Vec denom = (theta - prev).cwiseAbs2().array() + damping;
    state.si_omega += state.si_trajectory.cwiseQuotient(denom);
  }
  state.si_omega = state.si_omega.cwiseMax(0.0);
  state.si_trajectory = Vec::Zero(n);
  state.si_task_start = theta;

  FisherAnchor a;
  a.ref = params;
  a.diag = zeros_like(params);
  a.beta = state.strength;
  state.anchor = std::move(a);
}

Learner make_learner(LearnerKind kind, double learning_rate, double strength) {
  Learner l;
  l.kind = kind;
  l.opt.kind = kind == LearnerKind::Sgd ? OptimizerKind::Sgd : OptimizerKind::Adam;
  l.opt.learning_rate = learning_rate;
  l.reg.strength = strength;
  switch (kind) {
    case LearnerKind::Ewc: l.reg.kind = RegularizerKind::EwcDiag; break;
    case LearnerKind::Oewc: l.reg.kind = RegularizerKind::Oewc; break;
    case LearnerKind::Si: l.reg.kind = RegularizerKind::Si; break;
    case LearnerKind::Fish: l.reg.kind = RegularizerKind::EwcFull; break;
    default: l.reg.kind = RegularizerKind::None; break;
  }
  if (kind == LearnerKind::Efc) {
    // Benchmark-tuned controller. Pair with a squared-error settle loss: its
    // nudged target (1-lambda)*r + lambda*label stays inside the activity
    // range, so training converges to bounded weights. Under a cross-entropy
    // settle loss the nudge never closes (softmax confidence keeps demanding
    // larger activities), which eventually destabilizes the exponential
    // modulation loop; use that mode for short linear-response analyses only.
    l.controller.lambda = 0.3;
    l.controller.alpha = 0.1;
  }
  return l;
}

namespace {

struct BatchGrad {
  Vec grad;
  StepMetrics metrics;
};

double batch_accuracy_term(const Vec& output, int label) {
  Index best;
  output.maxCoeff(&best);
  return best == label ? 1.0 : 0.0;
}

// Settle one sample, backing off to finer integration when the explicit
// scheme blows up (rare aggressive-weight states). Returns nullopt when even
// the finest attempt diverges; the caller drops that sample's contribution.
std::optional<EquilibriumResult> settle_with_backoff(
    const NetworkParams& net, const FisherAnchor* anchor, const Vec& x,
    const LossSpec& spec, ControllerConfig cfg) {
  constexpr double kActivityGuard = 1e6;
  for (int attempt = 0; attempt < 3; ++attempt) {
    try {
      auto eq = run_to_equilibrium(net, anchor, x, spec, cfg);
      // A settle that runs out of steps mid-flight can hold an enormous state;
      // feeding it to the weight update would poison the parameters. Retry it
      // on a finer grid like an outright divergence.
      bool sane = eq.converged;
      for (const auto& r : eq.r)
        sane = sane && r.allFinite() && r.lpNorm<Eigen::Infinity>() < kActivityGuard;
      if (sane) return eq;
    } catch (const DivergenceError&) {
    }
    cfg.dt *= 0.2;
    cfg.max_steps = std::min(cfg.max_steps * 5, 100000);
  }
  return std::nullopt;
}

BatchGrad mean_task_gradient(const NetworkParams& net, const Dataset& batch,
                             LossKind kind) {
  BatchGrad out;
  out.grad = Vec::Zero(net.num_params());
  for (Index s = 0; s < batch.size(); ++s) {
    auto trace = forward(net, Vec(batch.inputs.row(s).transpose()));
    auto spec = make_loss(kind, batch.labels[s], batch.num_classes);
    auto lg = loss_and_grad(net, trace, spec);
    out.grad += flatten_mats(net, lg.grads);
    out.metrics.loss += lg.value;
    out.metrics.accuracy += batch_accuracy_term(trace.output(), batch.labels[s]);
  }
  out.grad /= double(batch.size());
  out.metrics.loss /= double(batch.size());
  out.metrics.accuracy /= double(batch.size());
  return out;
}

}  // namespace

StepMetrics train_step(Learner& learner, NetworkParams& params,
                       const Dataset& batch, LossKind kind) {
  batch.validate();
  if (batch.size() == 0) throw ConfigError("train_step: empty batch");
  const Index n = params.num_params();

  if (learner.kind == LearnerKind::Efc) {
    Vec pseudo = Vec::Zero(n);
    StepMetrics metrics;
    for (Index s = 0; s < batch.size(); ++s) {
      Vec x = batch.inputs.row(s).transpose();
      auto spec = make_loss(kind, batch.labels[s], batch.num_classes);
      auto trace = forward(params, x);
      metrics.loss += loss_value(spec, trace.output());
      metrics.accuracy += batch_accuracy_term(trace.output(), batch.labels[s]);
      auto eq = settle_with_backoff(params, learner.preservation(), x, spec,
                                    learner.controller);
      // weight_update at unit rate gives the raw local displacement; its
      // negation acts as the gradient handed to the optimizer.
      if (eq) pseudo -= flatten_mats(params, weight_update(params, *eq, x, 1.0));
    }
    pseudo /= double(batch.size());
    metrics.loss /= double(batch.size());
    metrics.accuracy /= double(batch.size());
    params.unflatten(params.flatten() + learner.opt.apply(pseudo));
    return metrics;
  }

  if (learner.kind == LearnerKind::Cng && learner.preservation() != nullptr) {
    const FisherAnchor& anchor = *learner.preservation();
    Vec delta = Vec::Zero(n);
    StepMetrics metrics;
    for (Index s = 0; s < batch.size(); ++s) {
      Vec x = batch.inputs.row(s).transpose();
      auto spec = make_loss(kind, batch.labels[s], batch.num_classes);
      auto trace = forward(params, x);
      metrics.loss += loss_value(spec, trace.output());
      metrics.accuracy += batch_accuracy_term(trace.output(), batch.labels[s]);
      delta += cng_update(params, anchor, x, spec, learner.opt.learning_rate);
    }
    delta /= double(batch.size());
    metrics.loss /= double(batch.size());
    metrics.accuracy /= double(batch.size());
    params.unflatten(params.flatten() + delta);
    return metrics;
  }

  // Backprop family (and the preconditioned learner before any anchor exists).
  auto bg = mean_task_gradient(params, batch, kind);
  if (learner.reg.kind == RegularizerKind::Si &&
      learner.reg.si_task_start.size() != n)
    learner.reg.si_task_start = params.flatten();
  // Before the first consolidation there is nothing to preserve; the penalty
  // only engages once an anchor exists.
  Vec total = learner.reg.anchor ? bg.grad + reg_gradient(learner.reg, params)
                                 : bg.grad;
  Vec delta = learner.opt.apply(total);
  if (learner.reg.kind == RegularizerKind::Si)
    si_accumulate(learner.reg, bg.grad, delta);
  params.unflatten(params.flatten() + delta);
  return bg.metrics;
}

}  // namespace efc
