#include "efc/equilibrium.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <iostream>
#include <limits>

namespace efc {

namespace {

// Per-layer preservation signals at the feedforward linearization; zero
// vectors when no anchor is given.
std::vector<Vec> gamma_at_trace(const NetworkParams& net,
                                const FisherAnchor* anchor,
                                const ForwardTrace& trace) {
  std::vector<Vec> gamma(net.num_layers());
  GammaOperator op;
  if (anchor) op = GammaOperator(*anchor, net);
  for (int i = 0; i < net.num_layers(); ++i) {
    const Vec& presyn = i == 0 ? trace.input : trace.acts[i - 1];
    gamma[i] = op.active() ? op.layer(i, presyn) : Vec(Vec::Zero(net.layers[i].out_dim));
  }
  return gamma;
}

// J_eff = sum_i J_i diag(r_i^-) J_i^T: cumulative output response to the
// per-layer modulation injected along transposed Jacobians.
Mat effective_response(const NetworkParams& net, const ForwardTrace& trace) {
  const Index d = net.output_dim();
  Mat j_eff = Mat::Zero(d, d);
  for (int i = 0; i < net.num_layers(); ++i) {
    Mat ji = output_jacobian(trace, i);
    j_eff.noalias() += ji * trace.acts[i].asDiagonal() * ji.transpose();
  }
  return j_eff;
}

}  // namespace

SteadyState steady_state(const NetworkParams& net, const FisherAnchor* anchor,
                         const ForwardTrace& trace, const Vec& target,
                         double alpha) {
  net.validate();
  require(alpha >= 0.0, "steady_state: alpha must be non-negative");
  require(target.size() == net.output_dim(),
          "steady_state: target size does not match the output dimension");

  SteadyState out;
  const Index d = net.output_dim();
  out.j_eff = effective_response(net, trace);

  auto gamma = gamma_at_trace(net, anchor, trace);
  out.gamma_eff = Vec::Zero(d);
  for (int i = 0; i < net.num_layers(); ++i)
    out.gamma_eff.noalias() +=
        output_jacobian(trace, i) * gamma[i].cwiseProduct(trace.acts[i]);

  Vec delta = target - trace.output();
  Mat lhs = out.j_eff + alpha * Mat::Identity(d, d);
  Eigen::FullPivLU<Mat> lu(lhs);
  if (!lu.isInvertible())
    throw NumericError(
        "steady_state: singular control response; use alpha > 0 to damp the "
        "solve");
  out.u_star = lu.solve(delta - out.gamma_eff);

  // Forward substitution through the strictly layered activity coupling:
  // dr_i = J_local_i dr_{i-1} + (J_i^T u + gamma_i) .* r_i^-.
  Index total = 0;
  for (const auto& s : net.layers) total += s.out_dim;
  out.r_star = Vec(total);
  Vec prev;  // dr_{i-1}
  Index off = 0;
  for (int i = 0; i < net.num_layers(); ++i) {
    Vec drive = output_jacobian(trace, i).transpose() * out.u_star + gamma[i];
    Vec dr = drive.cwiseProduct(trace.acts[i]);
    if (i > 0) dr.noalias() += trace.local_jacobians[i] * prev;
    out.r_star.segment(off, net.layers[i].out_dim) = trace.acts[i] + dr;
    off += net.layers[i].out_dim;
    prev = std::move(dr);
  }
  return out;
}

CurvatureFactors curvature_factors(const NetworkParams& net,
                                   const FisherAnchor& anchor,
                                   const ForwardTrace& trace) {
  net.validate();
  anchor.validate_against(net);
  const Index n = net.num_params();
  const Index d = net.output_dim();

  CurvatureFactors out;
  out.lhs = param_jacobian(net, trace).transpose();
  out.j_eff = effective_response(net, trace);

  // Contraction of the per-layer diagonal curvature with presynaptic
  // activities, mapped to output space: column (i,k,j) is
  // [J_i diag(r_i^-)]_{:,k} * F_i[k,j] * presyn_j.
  Mat contraction(d, n);
  Index off = 0;
  for (int i = 0; i < net.num_layers(); ++i) {
    const auto& s = net.layers[i];
    const Vec& presyn = i == 0 ? trace.input : trace.acts[i - 1];
    Mat jd = output_jacobian(trace, i) * trace.acts[i].asDiagonal();
    for (int k = 0; k < s.out_dim; ++k)
      for (int j = 0; j < s.weight_cols(); ++j) {
        double rj = j == s.in_dim ? 1.0 : presyn[j];
        contraction.col(off + Index(k) * s.weight_cols() + j) =
            jd.col(k) * (anchor.diag[i](k, j) * rj);
      }
    off += Index(s.out_dim) * s.weight_cols();
  }

  Eigen::FullPivLU<Mat> lu(out.j_eff);
  if (lu.isInvertible()) {
    out.rhs = lu.solve(contraction);
  } else {
    double ridge = 1e-8 * std::max(1.0, out.j_eff.cwiseAbs().maxCoeff());
    out.j_eff += ridge * Mat::Identity(d, d);
    out.rhs = Eigen::PartialPivLU<Mat>(out.j_eff).solve(contraction);
    out.j_eff_regularized = true;
    std::cerr << "warning: singular control response in curvature factors; "
                 "added ridge "
              << ridge << "\n";
  }
  return out;
}

Mat tilde_fisher(const NetworkParams& net, const FisherAnchor& anchor,
                 const ForwardTrace& trace) {
  const Index n = net.num_params();
  require(n <= kFullFisherParamCap,
          "tilde_fisher: " + std::to_string(n) +
              " parameters exceeds the dense cap of " +
              std::to_string(kFullFisherParamCap));
  auto f = curvature_factors(net, anchor, trace);
  return f.lhs * f.rhs;
}

Vec cng_update(const NetworkParams& net, const FisherAnchor& anchor,
               const Vec& input, const LossSpec& loss, double eta,
               std::optional<double> eps_reg) {
  auto trace = forward(net, input);
  Vec g = flatten_mats(net, loss_and_grad(net, trace, loss).grads);
  if (g.lpNorm<Eigen::Infinity>() == 0.0) return Vec::Zero(g.size());

  auto f = curvature_factors(net, anchor, trace);
  const Index n = net.num_params();
  Mat small = f.rhs * f.lhs;  // d x d
  double eps = eps_reg ? *eps_reg : 1e-6 * std::max(small.trace(), 0.0) / double(n);
  eps = std::max(eps, 1e-30);

  // (eps I + lhs rhs)^{-1} x = (x - lhs (eps I + rhs lhs)^{-1} rhs x) / eps,
  // so the solve never materializes the n x n matrix.
  const Index d = small.rows();
  small += eps * Mat::Identity(d, d);
  Vec rx = f.rhs * (-eta * g);
  Vec inner = Eigen::PartialPivLU<Mat>(small).solve(rx);
  return ((-eta * g) - f.lhs * inner) / eps;
}

double alignment(const Mat& m1, const Mat& m2) {
  require(m1.rows() == m2.rows() && m1.cols() == m2.cols(),
          "alignment: matrices must have the same shape");
  double n1 = m1.norm(), n2 = m2.norm();
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return m1.cwiseProduct(m2).sum() / (n1 * n2);
}

CurvatureReport make_curvature_report(const NetworkParams& net,
                                      const FisherAnchor& anchor,
                                      const ForwardTrace& trace) {
  require(anchor.has_full(),
          "make_curvature_report: anchor must carry the full curvature matrix");
  const Index n = net.num_params();
  require(n <= kFullFisherParamCap,
          "make_curvature_report: " + std::to_string(n) +
              " parameters exceeds the dense cap of " +
              std::to_string(kFullFisherParamCap));

  CurvatureReport rep;
  rep.tilde_raw = tilde_fisher(net, anchor, trace);
  rep.tilde_sym = 0.5 * (rep.tilde_raw + rep.tilde_raw.transpose());
  rep.full = *anchor.full;
  rep.diag = flatten_mats(net, anchor.diag);

  double full_norm = rep.full.norm();
  rep.alignment_identity =
      full_norm == 0.0 ? 0.0
                       : rep.full.trace() / (std::sqrt(double(n)) * full_norm);
  double diag_norm = rep.diag.norm();
  rep.alignment_diag =
      (full_norm == 0.0 || diag_norm == 0.0)
          ? 0.0
          : rep.diag.dot(rep.full.diagonal()) / (diag_norm * full_norm);
  rep.alignment_tilde = alignment(rep.tilde_sym, rep.full);

  Eigen::SelfAdjointEigenSolver<Mat> efull(rep.full);
  rep.eigen.lambda_max_full = efull.eigenvalues().maxCoeff();
  rep.eigen.lambda_min_diag = rep.diag.minCoeff();
  Eigen::SelfAdjointEigenSolver<Mat> etilde(rep.tilde_sym);
  rep.eigen.lambda_max_tilde = etilde.eigenvalues().maxCoeff();

  // Basis of the measured curvature's column space (rank cut relative to the
  // top eigenvalue), then the smallest eigenvalue of the projected block.
  double cut = 1e-8 * std::max(rep.eigen.lambda_max_full, 0.0);
  Index rank = 0;
  for (Index i = 0; i < n; ++i)
    if (efull.eigenvalues()[i] > cut) ++rank;
  rep.eigen.span_rank = rank;
  if (rank > 0) {
    Mat basis = efull.eigenvectors().rightCols(rank);
    Mat projected = basis.transpose() * rep.tilde_sym * basis;
    Eigen::SelfAdjointEigenSolver<Mat> eproj(projected);
    rep.eigen.lambda_min_tilde_span = eproj.eigenvalues().minCoeff();
  }

  rep.trace_diag_inverse = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (rep.diag[i] <= 0.0) {
      rep.trace_diag_inverse = std::numeric_limits<double>::infinity();
      break;
    }
    rep.trace_diag_inverse += 1.0 / rep.diag[i];
  }

  Mat diag_minus_full = -rep.full;
  diag_minus_full.diagonal() += rep.diag;
  rep.correction_diag = diag_minus_full.norm();
  rep.correction_tilde = (rep.tilde_sym - rep.full).norm();
  rep.epsilon_reg = 1e-6 * std::max(rep.tilde_sym.trace(), 0.0) / double(n);
  return rep;
}

ForgettingBounds forgetting_bounds(const CurvatureReport& report,
                                   const Vec& grad_b, double eta) {
  require(eta > 0.0, "forgetting_bounds: eta must be positive");
  ForgettingBounds b;
  const double common = 0.5 * eta * eta * grad_b.squaredNorm();
  b.bp = common * report.eigen.lambda_max_full;
  b.ewc = common * report.trace_diag_inverse;
  b.efc = report.eigen.lambda_max_tilde > 0.0
              ? common / report.eigen.lambda_max_tilde
              : std::numeric_limits<double>::infinity();
  return b;
}

double volume_ratio(const CurvatureReport& report) {
  const double eps = report.epsilon_reg;
  double log_ratio = 0.0;
  for (Index i = 0; i < report.diag.size(); ++i) {
    double d = report.diag[i] + eps;
    if (d <= 0.0)
      throw NumericError(
          "volume_ratio: non-positive diagonal entry after regularization");
    log_ratio += 0.5 * std::log(d);
  }
  Eigen::SelfAdjointEigenSolver<Mat> etilde(report.tilde_sym);
  for (Index i = 0; i < etilde.eigenvalues().size(); ++i) {
    double v = etilde.eigenvalues()[i] + eps;
    if (v <= 0.0)
      throw NumericError(
          "volume_ratio: non-positive eigenvalue after regularization");
    log_ratio -= 0.5 * std::log(v);
  }
  return log_ratio;
}

RegimeReport curvature_regime(const NetworkParams& net,
                              const FisherAnchor& anchor,
                              const Dataset& batch_b, LossKind loss,
                              const Dataset* task_a_data) {
  net.validate();
  batch_b.validate();
  require(batch_b.size() > 0, "curvature_regime: empty task-B batch");

  auto mean_grad = [&](const Dataset& data) {
    Vec acc = Vec::Zero(net.num_params());
    for (Index s = 0; s < data.size(); ++s) {
      auto trace = forward(net, Vec(data.inputs.row(s).transpose()));
      auto spec = make_loss(loss, data.labels[s], data.num_classes);
      acc += flatten_mats(net, loss_and_grad(net, trace, spec).grads);
    }
    return Vec(acc / double(data.size()));
  };

  RegimeReport rep;
  Vec g_b = mean_grad(batch_b);
  rep.grad_b_sq = g_b.squaredNorm();

  Vec g_a;
  if (anchor.has_full()) {
    anchor.validate_against(net);
    g_a = *anchor.full * (net.flatten() - anchor.ref.flatten());
  } else if (task_a_data) {
    g_a = mean_grad(*task_a_data);
  } else {
    rep.available = false;
    return rep;
  }
  rep.available = true;
  rep.interference = g_a.dot(g_b);
  rep.d_loss_dt = -rep.grad_b_sq - rep.interference;

  double diff = rep.grad_b_sq + rep.interference;  // = -d_loss_dt
  double mag = std::max(rep.grad_b_sq, std::abs(rep.interference));
  if (mag == 0.0 || std::abs(diff) < 0.05 * mag)
    rep.regime = Regime::Stationary;
  else
    rep.regime = diff > 0.0 ? Regime::Descending : Regime::Ascending;
  return rep;
}

}  // namespace efc
