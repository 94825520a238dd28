#include "knas/gram.hpp"

#include "knas/eigensolver.hpp"
#include "knas/random.hpp"

#include <chrono>
#include <numeric>

namespace knas {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<Index> sample_columns(Index begin, Index end, int m, Rng& rng) {
  const Index size = end - begin;
  std::vector<Index> pool(static_cast<std::size_t>(size));
  std::iota(pool.begin(), pool.end(), begin);
  const Index take = std::min<Index>(m, size);
  for (Index i = 0; i < take; ++i) {
    std::uniform_int_distribution<Index> pick(i, size - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(take));
  return pool;
}

template <typename Fn>
MgmScore guarded(Estimator estimator, Fn&& compute) {
  const auto start = Clock::now();
  MgmScore score;
  score.estimator = estimator;
  try {
    score.value = compute(score.warnings);
    if (!std::isfinite(*score.value)) throw NumericError("score is not finite");
  } catch (const NumericError& e) {
    score.value.reset();
    score.numeric_ok = false;
    score.failure = e.what();
  }
  score.wall_time = seconds_since(start);
  return score;
}

Eigen::MatrixXd checked_grads(NetworkInstance& net, const Batch& batch, GradientMode mode) {
  Eigen::MatrixXd g = per_example_output_grads(net, batch, mode);
  if (!g.allFinite()) throw NumericError("per-example gradients contain non-finite entries");
  return g;
}

}  // namespace

std::string_view estimator_name(Estimator e) {
  switch (e) {
    case Estimator::exact: return "exact";
    case Estimator::layer_sampled: return "layer_sampled";
    case Estimator::split_halves: return "split_halves";
  }
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  for (Estimator e : {Estimator::exact, Estimator::layer_sampled, Estimator::split_halves})
    if (estimator_name(e) == name) return e;
  throw ContractError("unknown estimator '" + std::string(name) + "' (expected exact|layer_sampled|split_halves)");
}

MgmScore mgm_exact(const GramMatrix& h) {
  if (h.n() < 1 || h.h.cols() != h.n()) throw ContractError("mgm_exact: Gram matrix must be square and non-empty");
  return guarded(Estimator::exact, [&](auto&) {
    if (!h.h.allFinite()) throw NumericError("Gram matrix has non-finite entries");
    return h.h.mean();
  });
}

double layer_sampled_from_grads(const Eigen::MatrixXd& g, const ColumnRanges& columns, int m, std::uint64_t seed,
                                std::vector<std::string>* warnings) {
  if (m < 1) throw ContractError("per_layer_samples must be >= 1");
  const double n = static_cast<double>(g.rows());
  double total = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto [begin, end] = columns[k];
    if (end <= begin) {
      if (warnings) warnings->push_back("parameter tensor " + std::to_string(k) + " is empty; skipped");
      continue;
    }
    if (m > end - begin && warnings)
      warnings->push_back("parameter tensor " + std::to_string(k) + " has " + std::to_string(end - begin) +
                          " entries; sampling clamped from " + std::to_string(m));
    auto rng = make_rng(seed, Stream::mgm_sampling, {k});
    const std::vector<Index> cols = sample_columns(begin, end, m, rng);
    // Σ_{i,j} <g_i|S, g_j|S> = ‖Σ_i g_i|S‖²
    Eigen::VectorXd colsum(static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) colsum[static_cast<Index>(c)] = g.col(cols[c]).sum();
    total += colsum.squaredNorm() / (n * n);
    ++used;
  }
  if (used == 0) throw ContractError("layer-sampled MGM: every parameter tensor was skipped");
  return total / used;
}

double split_halves_from_grads(const Eigen::MatrixXd& g, const ColumnRanges& columns, int m, std::uint64_t seed) {
  if (m < 1) throw ContractError("per_layer_samples must be >= 1");
  const Index n = g.rows();
  if (n % 2 != 0)
    throw ContractError("split-halves MGM needs an even number of examples, got " + std::to_string(n) +
                        "; drop one example");
  if (n < 2) throw ContractError("split-halves MGM needs at least 2 examples");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto shuffle_rng = make_rng(seed, Stream::split_shuffle);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const Index half = n / 2;

  double total = 0.0;
  int used = 0;
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto [begin, end] = columns[k];
    if (end <= begin) continue;
    auto rng = make_rng(seed, Stream::mgm_sampling, {k});
    const std::vector<Index> cols = sample_columns(begin, end, m, rng);
    double tensor_sum = 0.0;
    for (Index c : cols) {
      double dot = 0.0;
      for (Index i = 0; i < half; ++i)
        dot += g(order[static_cast<std::size_t>(i)], c) * g(order[static_cast<std::size_t>(i + half)], c);
      tensor_sum += dot;
    }
    total += tensor_sum / static_cast<double>(cols.size());
    ++used;
  }
  if (used == 0) throw ContractError("split-halves MGM: every parameter tensor was skipped");
  return total / used;
}

MgmScore mgm_exact(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg) {
  return guarded(Estimator::exact,
                 [&](auto&) { return gram(checked_grads(net, batch, cfg.gradient_mode)).h.mean(); });
}

MgmScore mgm_layer_sampled(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg) {
  return guarded(Estimator::layer_sampled, [&](std::vector<std::string>& warnings) {
    const Eigen::MatrixXd g = checked_grads(net, batch, cfg.gradient_mode);
    return layer_sampled_from_grads(g, parameter_columns(net.graph), cfg.per_layer_samples, cfg.seed, &warnings);
  });
}

MgmScore mgm_split_halves(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg) {
  if (batch.size() % 2 != 0)
    throw ContractError("split-halves MGM needs an even number of examples, got " + std::to_string(batch.size()) +
                        "; drop one example");
  return guarded(Estimator::split_halves, [&](auto&) {
    const Eigen::MatrixXd g = checked_grads(net, batch, cfg.gradient_mode);
    return split_halves_from_grads(g, parameter_columns(net.graph), cfg.per_layer_samples, cfg.seed);
  });
}

MgmScore mgm_score(NetworkInstance& net, const Batch& batch, const MgmConfig& cfg) {
  switch (cfg.estimator) {
    case Estimator::exact: return mgm_exact(net, batch, cfg);
    case Estimator::layer_sampled: return mgm_layer_sampled(net, batch, cfg);
    case Estimator::split_halves: return mgm_split_halves(net, batch, cfg);
  }
  throw ContractError("unknown estimator");
}

double lambda_min(const GramMatrix& h, Index cap) {
  if (h.n() > cap)
    throw ContractError("lambda_min: n = " + std::to_string(h.n()) + " exceeds the spectral cap of " +
                        std::to_string(cap) + "; subsample the batch");
  if (h.n() < 1) throw ContractError("lambda_min: empty matrix");
  return symmetric_eigenvalues(h.h)[0];
}

double fro_norm(const GramMatrix& h) { return h.h.norm(); }

}  // namespace knas
