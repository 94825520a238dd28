#include "knas/convergence.hpp"

#include "knas/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace knas {

void FlowTrajectory::validate() const {
  const std::size_t n = times.size();
  if (losses.size() != n || lambda_mins.size() != n || bound_values.size() != n)
    throw ContractError("trajectory columns have different lengths");
  if (n == 0) throw ContractError("trajectory is empty");
  for (std::size_t k = 1; k < n; ++k)
    if (!(times[k] > times[k - 1])) throw ContractError("trajectory times must be strictly increasing");
}

FlowTrajectory gradient_flow(NetworkInstance& net, const Batch& batch, const FlowConfig& cfg) {
  batch.validate();
  if (net.blueprint.head.kind != HeadKind::scalar) throw ContractError("gradient flow needs a scalar (MSE) head");
  if (batch.size() > cfg.spectral_cap)
    throw ContractError("gradient flow: n = " + std::to_string(batch.size()) + " exceeds the spectral cap");
  if (!(cfg.horizon > 0.0) || !(cfg.record_every > 0.0)) throw ContractError("horizon and record_every must be positive");

  Graph& g = net.graph;
  const double n = static_cast<double>(batch.size());

  const GramMatrix h0 = gram(per_example_output_grads(net, batch, GradientMode::output));
  const double guard = 1.0 / (10.0 * fro_norm(h0));
  double step = cfg.step;
  if (step <= 0.0) {
    step = guard;
  } else if (cfg.enforce_guard && step > guard) {
    std::ostringstream os;
    os << "step " << step << " exceeds the stability guard 1/(10 ||H(0)||_F) = " << guard;
    throw ContractError(os.str());
  }
  const auto total_steps = static_cast<long>(std::llround(cfg.horizon / step));
  const long record_stride = std::max(1L, static_cast<long>(std::llround(cfg.record_every / step)));
  if (total_steps < 1) throw ContractError("horizon is shorter than one step");

  FlowTrajectory traj;
  traj.step = step;
  double loss0 = 0.0;
  auto& params = g.parameters();
  for (long k = 0;; ++k) {
    // L = ½‖y − y*‖² = n × (mean-reduced mse)
    const double loss = 2.0 * n * g.forward(batch.inputs, batch.targets)[0];
    if (k == 0) loss0 = loss;
    if (loss > cfg.divergence_factor * loss0 && loss0 > 0.0) {
      std::ostringstream os;
      os << "gradient flow diverged at t = " << static_cast<double>(k) * step << " (loss " << loss << " vs initial "
         << loss0 << "); retry with a smaller step";
      throw DivergenceError(os.str());
    }
    const bool record = k % record_stride == 0 || k == total_steps;
    GradientMap grads;
    if (k < total_steps) grads = g.backward();
    if (record) {
      const double t = static_cast<double>(k) * step;
      const GramMatrix h = k == 0 ? h0 : gram(per_example_output_grads(net, batch, GradientMode::output));
      const double lmin = lambda_min(h, cfg.spectral_cap);
      traj.times.push_back(t);
      traj.losses.push_back(loss);
      traj.lambda_mins.push_back(lmin);
      traj.bound_values.push_back(std::exp(-lmin * t) * loss0);
    }
    if (k == total_steps) break;
    for (std::size_t p = 0; p < params.size(); ++p) params[p].value.data() -= (step * n) * grads[p].data();
  }
  return traj;
}

BoundReport check_bound(const FlowTrajectory& traj, double relative_tolerance) {
  traj.validate();
  BoundReport report;
  const double loss0 = traj.losses.front();
  double running = traj.lambda_mins.front();
  report.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    running = std::min(running, traj.lambda_mins[k]);
    const double bound = std::exp(-running * traj.times[k]) * loss0 + relative_tolerance * loss0;
    const double margin = bound - traj.losses[k];
    report.min_margin = std::min(report.min_margin, margin);
    if (margin < 0.0) report.violations.push_back(k);
  }
  report.holds = report.violations.empty();
  return report;
}

SpectralRow spectral_row(const GramMatrix& h, Index cap) {
  SpectralRow row;
  row.lambda_min = lambda_min(h, cap);
  row.fro_norm = fro_norm(h);
  row.holds = row.lambda_min <= row.fro_norm;
  return row;
}

std::vector<SpectralRow> fnorm_bound_sweep(std::vector<NetworkInstance>& nets, const Batch& batch) {
  std::vector<SpectralRow> rows;
  rows.reserve(nets.size());
  for (NetworkInstance& net : nets) {
    rows.push_back(spectral_row(gram(per_example_output_grads(net, batch, GradientMode::output))));
  }
  return rows;
}

}  // namespace knas
