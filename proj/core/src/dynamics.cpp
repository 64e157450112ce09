#include "efc/dynamics.hpp"

#include <cmath>

namespace efc {

void ControllerConfig::validate() const {
  require(tau > 0.0, "controller: tau must be positive");
  require(dt > 0.0, "controller: dt must be positive");
  require(dt < tau, "controller: dt " + std::to_string(dt) +
          " must stay below tau " + std::to_string(tau) + " for stable Euler steps");
  require(alpha >= 0.0, "controller: alpha must be non-negative");
  require(lambda >= 0.0, "controller: lambda must be non-negative");
  require(max_steps > 0, "controller: max_steps must be positive");
  require(tol_r > 0.0 && tol_u > 0.0, "controller: tolerances must be positive");
  require(eps_logf > 0.0, "controller: eps_logf must be positive");
}

Vec make_target(const ForwardTrace& trace, const LossSpec& loss,
                const ControllerConfig& cfg) {
  if (!cfg.strong_target)
    return trace.output() - cfg.lambda * output_grad(loss, trace.output());
  if (loss.kind == LossKind::SquaredError) return loss.target;
  Vec t = Vec::Zero(trace.output().size());
  require(loss.label >= 0 && loss.label < t.size(), "target: label out of range");
  t[loss.label] = 1.0;
  return t;
}

std::vector<Mat> feedback_weights(const ForwardTrace& trace) {
  std::vector<Mat> q;
  for (int i = 0; i < int(trace.acts.size()); ++i)
    q.push_back(output_jacobian(trace, i).transpose());
  return q;
}

StepDeltas dynamics_step(DynamicsState& state, const NetworkParams& net,
                         const GammaOperator& gamma,
                         const std::vector<Mat>& feedback, const Vec& target,
                         const ControllerConfig& cfg) {
  const int L = net.num_layers();
  require(int(state.r.size()) == L, "dynamics state has wrong layer count");
  StepDeltas deltas;
  std::vector<Vec> dr(L);
  for (int i = 0; i < L; ++i) {
    const auto& s = net.layers[i];
    const Vec& presyn = i == 0 ? state.input : state.r[i - 1];
    Vec a(s.out_dim);
    if (s.bias)
      a.noalias() = net.weights[i].leftCols(s.in_dim) * presyn + net.weights[i].col(s.in_dim);
    else
      a.noalias() = net.weights[i] * presyn;
    Vec drive = act_value(s.act, a);
    Vec exponent = feedback[i] * state.u;
    if (gamma.active()) exponent += gamma.layer(i, presyn);
    dr[i] = (exponent.array().exp() * drive.array() - state.r[i].array()) / cfg.tau;
    deltas.dr_inf = std::max(deltas.dr_inf, dr[i].lpNorm<Eigen::Infinity>());
  }
  Vec du = -(state.r[L - 1] - target) - cfg.alpha * state.u;
  deltas.du_inf = du.lpNorm<Eigen::Infinity>();

  bool finite = du.allFinite();
  for (int i = 0; i < L && finite; ++i) finite = dr[i].allFinite();
  if (!finite)
    throw DivergenceError("dynamics diverged: non-finite derivative", state, -1);

  for (int i = 0; i < L; ++i) state.r[i] += cfg.dt * dr[i];
  state.u += cfg.dt * du;
  return deltas;
}

EquilibriumResult run_to_equilibrium(const NetworkParams& net,
                                     const FisherAnchor* anchor, const Vec& input,
                                     const LossSpec& loss,
                                     const ControllerConfig& cfg,
                                     const Vec* fixed_target,
                                     const TrajectoryCallback* trajectory) {
  cfg.validate();
  auto trace = forward(net, input);
  Vec target = fixed_target ? *fixed_target : make_target(trace, loss, cfg);
  require(target.size() == net.output_dim(), "target size mismatch");
  auto q = feedback_weights(trace);
  GammaOperator gamma;
  if (anchor) gamma = GammaOperator(*anchor, net);

  DynamicsState state{input, trace.acts, Vec::Zero(net.output_dim())};
  EquilibriumResult out;
  int step = 0;
  for (; step < cfg.max_steps; ++step) {
    StepDeltas d;
    try {
      d = dynamics_step(state, net, gamma, q, target, cfg);
    } catch (DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step),
                            std::move(e.last_state), step);
    }
    if (trajectory) {
      double effort = 0.0;
      for (const auto& qi : q) effort += 0.5 * (qi * state.u).squaredNorm();
      (*trajectory)({step, (step + 1) * cfg.dt, d.dr_inf, d.du_inf, effort,
                     (state.r.back() - target).lpNorm<Eigen::Infinity>()});
    }
    if (d.dr_inf <= cfg.tol_r && d.du_inf <= cfg.tol_u) {
      out.converged = true;
      ++step;
      break;
    }
  }
  out.steps = step;
  out.r = std::move(state.r);
  out.u = std::move(state.u);
  for (int i = 0; i < net.num_layers(); ++i) {
    out.psi.push_back(q[i] * out.u);
    out.control_effort += 0.5 * out.psi.back().squaredNorm();
  }
  if (gamma.active()) {
    for (int i = 0; i < net.num_layers(); ++i)
      out.gamma.push_back(gamma.layer(i, i == 0 ? input : out.r[i - 1]));
  } else {
    for (int i = 0; i < net.num_layers(); ++i)
      out.gamma.push_back(Vec::Zero(net.layers[i].out_dim));
  }
  return out;
}

std::vector<Mat> weight_update(const NetworkParams& net,
                               const EquilibriumResult& result, const Vec& input,
                               double lr) {
  require(int(result.r.size()) == net.num_layers(), "weight_update: layer count mismatch");
  std::vector<Mat> dw;
  for (int i = 0; i < net.num_layers(); ++i) {
    const auto& s = net.layers[i];
    const Vec& presyn = i == 0 ? input : result.r[i - 1];
    Vec a(s.out_dim);
    if (s.bias)
      a.noalias() = net.weights[i].leftCols(s.in_dim) * presyn + net.weights[i].col(s.in_dim);
    else
      a.noalias() = net.weights[i] * presyn;
    Vec residual = result.r[i] - act_value(s.act, a);
    Mat g(s.out_dim, s.weight_cols());
    g.leftCols(s.in_dim) = residual * presyn.transpose();
    if (s.bias) g.col(s.in_dim) = residual;
    dw.push_back(lr * g);
  }
  return dw;
}

namespace {

// Control effort as a smooth function of a settled state: at equilibrium
// psi = log r - log act(a) - gamma. `plain` is 0.5 ||psi||^2; `weighted`
// scales each squared component by the settled activity it modulates.
struct EffortPair {
  double plain = 0.0;
  double weighted = 0.0;
};

EffortPair effort_functional(const NetworkParams& net, const GammaOperator& gamma,
                             const Vec& input, const std::vector<Vec>& r,
                             double eps_logf) {
  EffortPair h;
  for (int i = 0; i < net.num_layers(); ++i) {
    const auto& s = net.layers[i];
    const Vec& presyn = i == 0 ? input : r[i - 1];
    Vec a(s.out_dim);
    if (s.bias)
      a.noalias() = net.weights[i].leftCols(s.in_dim) * presyn + net.weights[i].col(s.in_dim);
    else
      a.noalias() = net.weights[i] * presyn;
    Vec drive = act_value(s.act, a);
    Vec g = gamma.active() ? gamma.layer(i, presyn) : Vec(Vec::Zero(s.out_dim));
    for (int k = 0; k < s.out_dim; ++k) {
      double psi = std::log(std::max(r[i][k], eps_logf)) -
                   std::log(std::max(drive[k], eps_logf)) - g[k];
      h.plain += 0.5 * psi * psi;
      h.weighted += 0.5 * r[i][k] * psi * psi;
    }
  }
  return h;
}

}  // namespace

GradientCheck control_effort_gradient_check(const NetworkParams& net,
                                            const FisherAnchor* anchor,
                                            const Vec& input, const LossSpec& loss,
                                            const ControllerConfig& cfg,
                                            double eps) {
  net.validate();
  const Index n = net.num_params();
  require(n <= 200, "gradient check is a diagnostic for tiny nets (" +
          std::to_string(n) + " parameters given, cap is 200)");
  require(eps > 0.0, "gradient check: eps must be positive");

  auto base_trace = forward(net, input);
  const Vec target = make_target(base_trace, loss, cfg);

  GradientCheck out;
  out.conclusive = true;
  auto settle = [&](const NetworkParams& p) {
    auto res = run_to_equilibrium(p, anchor, input, loss, cfg, &target);
    if (!res.converged) out.conclusive = false;
    return res;
  };

  auto base = settle(net);

  // Analytic gradients at the settled state; the indirect dependence through
  // the settled activities drops at an effort optimum. The weighted variant
  // carries the activity factor the shared feedback actually optimizes under.
  out.analytic = Vec::Zero(n);
  out.analytic_weighted = Vec::Zero(n);
  {
    GammaOperator gamma;
    if (anchor) gamma = GammaOperator(*anchor, net);
    Index off = 0;
    for (int i = 0; i < net.num_layers(); ++i) {
      const auto& s = net.layers[i];
      const Vec& presyn = i == 0 ? input : base.r[i - 1];
      Vec a(s.out_dim);
      if (s.bias)
        a.noalias() = net.weights[i].leftCols(s.in_dim) * presyn + net.weights[i].col(s.in_dim);
      else
        a.noalias() = net.weights[i] * presyn;
      Vec drive = act_value(s.act, a);
      Vec slope = act_deriv(s.act, a);
      Vec g = gamma.active() ? gamma.layer(i, presyn) : Vec(Vec::Zero(s.out_dim));
      for (int k = 0; k < s.out_dim; ++k) {
        double psi = std::log(std::max(base.r[i][k], cfg.eps_logf)) -
                     std::log(std::max(drive[k], cfg.eps_logf)) - g[k];
        double log_drive_slope = slope[k] / std::max(drive[k], cfg.eps_logf);
        for (int j = 0; j < s.weight_cols(); ++j) {
          double rj = j == s.in_dim ? 1.0 : presyn[j];
          double curv = anchor ? anchor->diag[i](k, j) : 0.0;
          double beta = anchor ? anchor->beta : 0.0;
          double partial = psi * (beta * curv - log_drive_slope) * rj;
          Index p = off + Index(k) * s.weight_cols() + j;
          out.analytic[p] = partial;
          out.analytic_weighted[p] = base.r[i][k] * partial;
        }
      }
      off += Index(s.out_dim) * s.weight_cols();
    }
  }

  // Central differences of both effort functionals, dynamics re-run per probe
  // against the base target.
  out.numeric = Vec::Zero(n);
  out.numeric_weighted = Vec::Zero(n);
  Vec theta = net.flatten();
  NetworkParams probe = net;
  for (Index p = 0; p < n; ++p) {
    Vec tp = theta, tm = theta;
    tp[p] += eps;
    tm[p] -= eps;
    probe.unflatten(tp);
    GammaOperator gp;
    if (anchor) gp = GammaOperator(*anchor, probe);
    auto rp = settle(probe);
    EffortPair hp = effort_functional(probe, gp, input, rp.r, cfg.eps_logf);
    probe.unflatten(tm);
    GammaOperator gm;
    if (anchor) gm = GammaOperator(*anchor, probe);
    auto rm = settle(probe);
    EffortPair hm = effort_functional(probe, gm, input, rm.r, cfg.eps_logf);
    out.numeric[p] = (hp.plain - hm.plain) / (2 * eps);
    out.numeric_weighted[p] = (hp.weighted - hm.weighted) / (2 * eps);
  }

  out.max_rel_err = (out.analytic - out.numeric).lpNorm<Eigen::Infinity>() /
                    (out.numeric.lpNorm<Eigen::Infinity>() + 1e-12);
  out.max_rel_err_weighted =
      (out.analytic_weighted - out.numeric_weighted).lpNorm<Eigen::Infinity>() /
      (out.numeric_weighted.lpNorm<Eigen::Infinity>() + 1e-12);
  return out;
}

}  // namespace efc
