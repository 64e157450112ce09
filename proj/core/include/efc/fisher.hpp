#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "efc/data.hpp"
#include "efc/net.hpp"

namespace efc {

// Consolidated snapshot of a finished task: reference weights, per-layer
// diagonal curvature estimates, and optionally the dense curvature matrix.
struct FisherAnchor {
  NetworkParams ref;       // weights at consolidation time
  std::vector<Mat> diag;   // per-layer, same shapes as the weights
  double beta = 0.0;       // preservation strength
  std::optional<Mat> full; // dense n x n estimate (small nets only)
  // Saturation bound on each preservation entry. The linear drift formula is a
  // first-order signal; past |gamma| ~ 1 its exponential gain would stiffen the
  // dynamics beyond what the integrator can follow, so strong-preservation
  // configurations cap it. Infinity (default) applies the exact formula.
  double gamma_cap = std::numeric_limits<double>::infinity();

  bool has_full() const { return full.has_value(); }
  void validate_against(const NetworkParams& net) const;
};

// Per-parameter squared gradients at the observed labels, averaged over the
// dataset. One matrix per layer, shaped like the weights.
std::vector<Mat> fisher_diag(const NetworkParams& net, const Dataset& data,
                             LossKind kind);

// Dense mean outer product of per-sample gradients. Refuses networks above
// kFullFisherParamCap parameters.
inline constexpr Index kFullFisherParamCap = 20000;
Mat fisher_full(const NetworkParams& net, const Dataset& data, LossKind kind);

// Preservation signal for drifted weights: for layer i and unit k,
//   gamma[i][k] = -beta * sum_j presyn_j * diag[i](k,j) * (W - W_ref)[i](k,j),
// contracted over the augmented presynaptic activity (bias input is 1).
// The cached form factors out (diag .* (W - W_ref)) once per weight setting.
class GammaOperator {
 public:
  GammaOperator() = default;
  GammaOperator(const FisherAnchor& anchor, const NetworkParams& net);

  // presyn: activity entering layer i, logical size (bias handled here)
  Vec layer(int i, const Vec& presyn) const;
  std::vector<Vec> all(const Vec& input, const std::vector<Vec>& acts) const;
  bool active() const { return beta_ != 0.0 && !scaled_drift_.empty(); }

 private:
  std::vector<Mat> scaled_drift_;  // diag .* (W - W_ref), per layer
  std::vector<bool> has_bias_;
  double beta_ = 0.0;
  double cap_ = std::numeric_limits<double>::infinity();
};

std::vector<Vec> gamma_signal(const FisherAnchor& anchor, const NetworkParams& net,
                              const ForwardTrace& trace);

// Consolidate the current weights and task data into an anchor. A previous
// anchor's curvature decays by `decay` and the fresh estimate is added.
FisherAnchor snapshot_anchor(const NetworkParams& net, const Dataset& data,
                             LossKind kind, double beta, bool with_full = false,
                             const FisherAnchor* prev = nullptr,
                             double decay = 1.0);

// Anchor file: "EFCA" magic, u32 version, beta, layer specs, weights,
// diagonal curvature, optional dense curvature.
void save_anchor(const std::string& path, const FisherAnchor& anchor);
FisherAnchor load_anchor(const std::string& path);

}  // namespace efc
