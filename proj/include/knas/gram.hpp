#pragma once

#include "knas/errors.hpp"
#include "knas/netbuild.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace knas {

// H = G Gᵀ for the n x P per-example gradient matrix G.
struct GramMatrix {
  Eigen::MatrixXd h;

  Index n() const { return h.rows(); }
};

template <typename Derived>
GramMatrix gram(const Eigen::MatrixBase<Derived>& g) {
  if (g.rows() < 1 || g.cols() < 1) throw ContractError("gram: gradient matrix must be non-empty");
  if (!g.allFinite()) throw NumericError("gram: gradient matrix has non-finite entries");
  GramMatrix out;
  out.h.noalias() = g * g.transpose();
  // exact symmetry; the product is symmetric only up to rounding
  out.h = (0.5 * (out.h + out.h.transpose())).eval();
  return out;
}

enum class Estimator { exact, layer_sampled, split_halves };

std::string_view estimator_name(Estimator e);
Estimator parse_estimator(std::string_view name);

struct MgmConfig {
  int per_layer_samples = 50;
  std::uint64_t seed = 0;
  Estimator estimator = Estimator::split_halves;
  GradientMode gradient_mode = GradientMode::loss;

  friend bool operator==(const MgmConfig&, const MgmConfig&) = default;
};

struct MgmScore {
  std::optional<double> value;  // absent when numeric_ok is false
  Estimator estimator = Estimator::exact;
  double wall_time = 0.0;
  bool numeric_ok = true;
  std::string failure;
  std::vector<std::string> warnings;

  friend bool operator==(const MgmScore& a, const MgmScore& b) {
    return a.value == b.value && a.estimator == b.estimator && a.numeric_ok == b.numeric_ok &&
           a.failure == b.failure;
  }
};

// Mean of all entries of H.
MgmScore mgm_exact(const GramMatrix& h);

// Per-tensor sampling and splitting on a precomputed gradient matrix.
// columns[k] = [begin, end) of tensor k within a row of G.
using ColumnRanges = std::vector<std::pair<Index, Index>>;

// (1 / (M n²)) Σ_tensors Σ_{i,j} <g_i|S, g_j|S>, S = m coordinates of the
// tensor drawn without replacement. m is clamped to each tensor's size.
double layer_sampled_from_grads(const Eigen::MatrixXd& g, const ColumnRanges& columns, int m, std::uint64_t seed,
                                std::vector<std::string>* warnings = nullptr);

// For each sampled coordinate, dot the first n/2 shuffled per-example
// gradients with the last n/2; average over coordinates, then over tensors.
double split_halves_from_grads(const Eigen::MatrixXd& g, const ColumnRanges& columns, int m, std::uint64_t seed);

// Scores from a network at its current parameters.
MgmScore mgm_exact(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg);
MgmScore mgm_layer_sampled(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg);
MgmScore mgm_split_halves(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg);
// Dispatches on cfg.estimator.
MgmScore mgm_score(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg);

inline constexpr Index kDefaultSpectralCap = 256;

double lambda_min(const GramMatrix& h, Index cap = kDefaultSpectralCap);
double fro_norm(const GramMatrix& h);

}  // namespace knas
