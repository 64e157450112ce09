#pragma once

#include <optional>

#include "efc/data.hpp"
#include "efc/fisher.hpp"

namespace efc {

// Closed-form first-order steady state of the controlled dynamics around the
// feedforward point: u* solves (J_eff + alpha I) u = (delta_L - gamma_eff) and
// the activities move by (I - J)^{-1} diag(r^-) (Q u* + gamma), evaluated by
// forward substitution through the layer recursion.
struct SteadyState {
  Vec u_star;     // output-sized control at the fixed point
  Vec r_star;     // all activities stacked layer-major (r_1 ... r_L)
  Mat j_eff;      // effective control-to-output response
  Vec gamma_eff;  // cumulative preservation seen at the output
};

SteadyState steady_state(const NetworkParams& net, const FisherAnchor* anchor,
                         const ForwardTrace& trace, const Vec& target,
                         double alpha);

// Low-rank factorization of the equilibrium curvature: the raw matrix is
// lhs * rhs with lhs = param_jacobian^T (n x d_L) and rhs (d_L x n) the
// J_eff^{-1}-filtered contraction of the per-layer diagonal curvature with the
// presynaptic activities. Rank is at most the output dimension.
struct CurvatureFactors {
  Mat lhs;    // n x d_L
  Mat rhs;    // d_L x n
  Mat j_eff;  // d_L x d_L, possibly ridge-regularized (see flag)
  bool j_eff_regularized = false;
};

CurvatureFactors curvature_factors(const NetworkParams& net,
                                   const FisherAnchor& anchor,
                                   const ForwardTrace& trace);

// Dense equilibrium curvature (lhs * rhs materialized). Guarded to small nets.
Mat tilde_fisher(const NetworkParams& net, const FisherAnchor& anchor,
                 const ForwardTrace& trace);

// Preconditioned step Delta = -eta (raw_curvature + eps_reg I)^{-1} grad for
// one sample's loss gradient, solved through the low-rank factors without
// materializing the dense matrix. eps_reg defaults to 1e-6 trace / n.
Vec cng_update(const NetworkParams& net, const FisherAnchor& anchor,
               const Vec& input, const LossSpec& loss, double eta,
               std::optional<double> eps_reg = std::nullopt);

// Frobenius cosine between two equally shaped matrices; 0 if either is zero.
double alignment(const Mat& m1, const Mat& m2);

struct EigenSummary {
  double lambda_max_full = 0.0;  // top eigenvalue of the full curvature
  double lambda_min_diag = 0.0;  // smallest diagonal-curvature entry
  double lambda_max_tilde = 0.0; // top eigenvalue of the symmetrized tilde
  double lambda_min_tilde_span = 0.0;  // smallest tilde eigenvalue restricted
                                       // to the full curvature's column space
  Index span_rank = 0;           // dimension of that column space
};

// Diagnostic bundle tying the equilibrium curvature to the directly measured
// task curvature. Built from an anchor that carries the full (dense) matrix.
struct CurvatureReport {
  Mat tilde_raw;  // asymmetric product, the matrix solves use
  Mat tilde_sym;  // (raw + raw^T)/2, the matrix diagnostics use
  Mat full;       // measured full curvature F
  Vec diag;       // flattened per-layer diagonal curvature D
  double alignment_identity = 0.0;  // alignment(I, F)
  double alignment_diag = 0.0;      // alignment(diag-matrix D, F)
  double alignment_tilde = 0.0;     // alignment(tilde_sym, F)
  EigenSummary eigen;
  double trace_diag_inverse = 0.0;  // tr(D^{-1}); +inf on a zero entry
  double correction_diag = 0.0;     // ||D - F||_F
  double correction_tilde = 0.0;    // ||tilde_sym - F||_F
  double epsilon_reg = 0.0;         // ridge used by solves/volume (1e-6 tr/n)
};

CurvatureReport make_curvature_report(const NetworkParams& net,
                                      const FisherAnchor& anchor,
                                      const ForwardTrace& trace);

// One-step forgetting bounds for a task-B gradient of this size. Big-O
// correction terms live in the report (correction_diag / correction_tilde)
// and are reported alongside, never folded into the leading terms.
struct ForgettingBounds {
  double bp = 0.0;   // (eta^2/2) ||g||^2 lambda_max
  double ewc = 0.0;  // (eta^2/2) ||g||^2 tr(D^{-1}); +inf on a zero diagonal
  double efc = 0.0;  // (eta^2/2) ||g||^2 / lambda_max_tilde
};

ForgettingBounds forgetting_bounds(const CurvatureReport& report,
                                   const Vec& grad_b, double eta);

// log of sqrt(det(D + eps) / det(tilde_sym + eps)): the log-volume ratio of
// the diagonal-constraint region to the equilibrium-constraint region.
double volume_ratio(const CurvatureReport& report);

enum class Regime { Descending, Stationary, Ascending };

// Instantaneous trend of the combined two-task objective under plain
// gradient descent on task B: d/dt = -||g_B||^2 - g_A . g_B.
struct RegimeReport {
  double grad_b_sq = 0.0;      // ||g_B||^2
  double interference = 0.0;   // g_A . g_B
  double d_loss_dt = 0.0;      // -grad_b_sq - interference
  Regime regime = Regime::Descending;
  bool available = false;  // false when no task-A gradient source exists
};

// g_A comes from the anchor's full curvature via F (theta - theta_ref) when
// present, else from an exact gradient on held-out task-A data when supplied.
RegimeReport curvature_regime(const NetworkParams& net,
                              const FisherAnchor& anchor,
                              const Dataset& batch_b, LossKind loss,
                              const Dataset* task_a_data = nullptr);

}  // namespace efc
