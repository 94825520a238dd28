#include "knas/stats.hpp"

#include "knas/errors.hpp"
#include "knas/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace knas {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

CorrelationReport spearman(std::span<const double> xs, std::span<const double> ys, std::uint64_t seed,
                           int permutations) {
  if (xs.size() != ys.size()) throw ContractError("spearman: series lengths differ");
  const std::size_t n = xs.size();
  if (n < 3) throw ContractError("spearman: needs at least 3 pairs");
  if (permutations < 1) throw ContractError("spearman: permutations must be >= 1");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw NumericError("spearman: non-finite value in series");

  const std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
  const double mean = 0.5 * static_cast<double>(n + 1);
  std::vector<double> cx(n), cy(n);
  double sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cx[i] = rx[i] - mean;
    cy[i] = ry[i] - mean;
    sxx += cx[i] * cx[i];
    syy += cy[i] * cy[i];
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("spearman: rho is undefined for a constant series");
  const double denom = std::sqrt(sxx * syy);
  auto rho_of = [&](const std::vector<std::size_t>& perm) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += cx[i] * cy[perm[i]];
    return s / denom;
  };

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CorrelationReport report;
  report.n = static_cast<Index>(n);
  report.rho = std::clamp(rho_of(perm), -1.0, 1.0);
  report.xs.assign(xs.begin(), xs.end());
  report.ys.assign(ys.begin(), ys.end());
  const double threshold = std::abs(report.rho) - 1e-12;

  double factorial = 1.0;
  for (std::size_t i = 2; i <= n && factorial <= permutations; ++i) factorial *= static_cast<double>(i);
  if (factorial <= permutations) {
    long hits = 0, total = 0;
    do {
      hits += std::abs(rho_of(perm)) >= threshold;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    report.p_value = static_cast<double>(hits) / static_cast<double>(total);
    report.permutations = 0;
  } else {
    auto rng = make_rng(seed, Stream::permutation);
    long hits = 0;
    for (int p = 0; p < permutations; ++p) {
      std::shuffle(perm.begin(), perm.end(), rng);
      hits += std::abs(rho_of(perm)) >= threshold;
    }
    report.p_value = static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
    report.permutations = permutations;
  }
  return report;
}

bool ranks_before(const TrialRecord& a, const TrialRecord& b) {
  const bool a_ok = a.score.numeric_ok && a.score.value.has_value();
  const bool b_ok = b.score.numeric_ok && b.score.value.has_value();
  if (a_ok != b_ok) return a_ok;
  if (a_ok && *a.score.value != *b.score.value) return *a.score.value > *b.score.value;
  return a.genotype.index() < b.genotype.index();
}

std::vector<std::size_t> assign_mgm_ranks(std::vector<TrialRecord>& records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ranks_before(records[a], records[b]); });
  for (std::size_t r = 0; r < order.size(); ++r) records[order[r]].mgm_rank = static_cast<int>(r + 1);
  return order;
}

std::vector<RankGroup> rank_group_summary(const std::vector<TrialRecord>& records, int groups) {
  if (groups < 2) throw ContractError("rank_group_summary: groups must be >= 2");
  if (static_cast<std::size_t>(groups) > records.size())
    throw ContractError("rank_group_summary: more groups than records");
  std::string untrained;
  for (const auto& r : records)
    if (!r.trained()) untrained += (untrained.empty() ? "" : ", ") + r.genotype.to_string();
  if (!untrained.empty()) throw ContractError("rank_group_summary: records without accuracies: " + untrained);

  std::vector<const TrialRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  // ascending MGM = reverse of the search order
  std::sort(sorted.begin(), sorted.end(), [](const TrialRecord* a, const TrialRecord* b) {
    const bool a_ok = a->score.numeric_ok && a->score.value.has_value();
    const bool b_ok = b->score.numeric_ok && b->score.value.has_value();
    if (a_ok != b_ok) return !a_ok;
    if (a_ok && *a->score.value != *b->score.value) return *a->score.value < *b->score.value;
    return a->genotype.index() < b->genotype.index();
  });

  const std::size_t n = sorted.size();
  const std::size_t g = static_cast<std::size_t>(groups);
  std::vector<RankGroup> out;
  std::size_t at = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t size = n / g + (k < n % g ? 1 : 0);
    RankGroup row;
    row.group = static_cast<int>(k + 1);
    row.size = static_cast<Index>(size);
    row.min_mgm = std::numeric_limits<double>::infinity();
    row.max_mgm = -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t i = at; i < at + size; ++i) {
      acc += sorted[i]->curve->final_val_accuracy();
      if (sorted[i]->score.value) {
        row.min_mgm = std::min(row.min_mgm, *sorted[i]->score.value);
        row.max_mgm = std::max(row.max_mgm, *sorted[i]->score.value);
      }
    }
    if (row.min_mgm > row.max_mgm) row.min_mgm = row.max_mgm = std::nan("");
    row.mean_accuracy = acc / static_cast<double>(size);
    out.push_back(row);
    at += size;
  }
  return out;
}

}  // namespace knas
