#pragma once

#include "knas/gram.hpp"
#include "knas/netbuild.hpp"

#include <vector>

namespace knas {

// Explicit-Euler stand-in for gradient flow on L(w) = ½‖y(w) − y*‖².
struct FlowConfig {
  double step = 0.0;  // <= 0 selects the stability guard 1 / (10 ‖H(0)‖_F)
  double horizon = 1.0;
  double record_every = 0.1;
  bool enforce_guard = true;  // reject steps above the guard
  Index spectral_cap = kDefaultSpectralCap;
  double divergence_factor = 10.0;
};

// Losses are ‖y* − y(t)‖²; bound_values[k] = exp(−λ_min(H(t_k)) t_k) · losses[0].
struct FlowTrajectory {
  std::vector<double> times;
  std::vector<double> losses;
  std::vector<double> lambda_mins;
  std::vector<double> bound_values;
  double step = 0.0;

  std::size_t size() const { return times.size(); }
  // Throws ContractError unless the lists share a length and times increase.
  void validate() const;

  friend bool operator==(const FlowTrajectory&, const FlowTrajectory&) = default;
};

class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Requires a scalar (MSE) head. Throws DivergenceError when the loss exceeds
// divergence_factor times its initial value.
FlowTrajectory gradient_flow(NetworkInstance& net, const Batch& batch, const FlowConfig& cfg);

struct BoundReport {
  bool holds = true;
  double min_margin = 0.0;
  std::vector<std::size_t> violations;
};

inline constexpr double kBoundTolerance = 1e-6;

// Checks losses[k] <= exp(−λ̄_k t_k) losses[0] + tol · losses[0], where λ̄_k is
// the running minimum of lambda_mins[0..k].
BoundReport check_bound(const FlowTrajectory& traj, double relative_tolerance = kBoundTolerance);

struct SpectralRow {
  double lambda_min = 0.0;
  double fro_norm = 0.0;
  bool holds = true;  // lambda_min <= fro_norm
};

SpectralRow spectral_row(const GramMatrix& h, Index cap = kDefaultSpectralCap);

// λ_min(H(0)) and ‖H(0)‖_F per network, H from output-mode gradients.
std::vector<SpectralRow> fnorm_bound_sweep(std::vector<NetworkInstance>& nets, const Batch& batch);

}  // namespace knas
