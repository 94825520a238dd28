#pragma once

#include "knas/archspace.hpp"
#include "knas/gram.hpp"
#include "knas/trainer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace knas {

// One architecture's outcome: its MGM at init and, when trained, its curve.
struct TrialRecord {
  CellGenotype genotype;
  std::uint64_t seed = 0;  // init seed of the scored/trained instance
  MgmScore score;
  int mgm_rank = 0;  // 1 = highest MGM, 0 = unranked
  std::optional<EvalCurve> curve;

  bool trained() const { return curve.has_value() && !curve->val_accuracy.empty(); }

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct CorrelationReport {
  double rho = 0.0;
  double p_value = 1.0;
  Index n = 0;
  int permutations = 0;  // 0 when the null distribution was enumerated exactly
  std::vector<double> xs;
  std::vector<double> ys;

  friend bool operator==(const CorrelationReport&, const CorrelationReport&) = default;
};

// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

inline constexpr int kDefaultPermutations = 10000;

// Spearman's rho (Pearson correlation of average ranks) with a two-sided
// permutation p-value. When n! <= permutations the null distribution is
// enumerated exactly (p = hits / n!); otherwise `permutations` seeded
// shuffles are drawn and p = (hits + 1) / (permutations + 1).
CorrelationReport spearman(std::span<const double> xs, std::span<const double> ys, std::uint64_t seed = 0,
                           int permutations = kDefaultPermutations);

struct RankGroup {
  int group = 0;  // 1 = lowest MGM
  Index size = 0;
  double mean_accuracy = 0.0;
  double min_mgm = 0.0;
  double max_mgm = 0.0;

  friend bool operator==(const RankGroup&, const RankGroup&) = default;
};

// Orders records by ascending MGM (numeric failures first, ties by genotype
// index), cuts them into `groups` contiguous groups whose sizes differ by at
// most one, and averages each group's final validation accuracy.
std::vector<RankGroup> rank_group_summary(const std::vector<TrialRecord>& records, int groups);

// Score order used for top-k filtering: descending value, numeric failures
// last, ties by canonical genotype index.
bool ranks_before(const TrialRecord& a, const TrialRecord& b);

// Sets mgm_rank (1-based, ranks_before order) on every record and returns the
// indices in rank order.
std::vector<std::size_t> assign_mgm_ranks(std::vector<TrialRecord>& records);

}  // namespace knas
