#pragma once

#include "knas/archspace.hpp"
#include "knas/dataset.hpp"
#include "knas/gram.hpp"
#include "knas/stats.hpp"
#include "knas/trainer.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace knas {

// The genotypes a search draws from; the full cell space by default.
class SearchSpace {
 public:
  SearchSpace();
  explicit SearchSpace(std::vector<CellGenotype> cells);

  std::size_t size() const { return cells_.size(); }
  // n distinct cells by partial Fisher-Yates; on the full space this equals
  // sample_cells(seed, n), and shorter draws are prefixes of longer ones.
  std::vector<CellGenotype> sample(std::uint64_t seed, int n) const;

 private:
  std::vector<CellGenotype> cells_;
};

enum class Policy { knas, random };

std::string_view policy_name(Policy p);
Policy parse_policy(std::string_view name);

struct SearchConfig {
  int max_iterations = 100;  // M
  int k = 20;
  MgmConfig mgm;  // per-genotype sampling seeds are derived from `seed`
  TrainConfig train;  // per-genotype training seeds are derived from `seed`
  std::uint64_t seed = 0;
  int scoring_batch = 32;
  int width = 8;
  BlueprintOptions arch;
  int threads = 1;

  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

struct SearchReport {
  Policy policy = Policy::knas;
  SearchConfig config;
  CellGenotype best;
  std::vector<TrialRecord> trials;  // sampling order
  double scoring_wall_time = 0.0;   // summed over trials
  double training_wall_time = 0.0;  // summed over trained candidates
  bool k_equals_m = false;
  bool fewer_viable = false;  // fewer than k candidates had a finite score

  std::size_t trained_count() const;
  const TrialRecord& best_trial() const;

  friend bool operator==(const SearchReport&, const SearchReport&) = default;
};

// Chain blueprint for one cell under the search's skeleton settings.
Blueprint search_blueprint(const SearchConfig& cfg, const CellGenotype& cell);
std::uint64_t init_seed_for(const SearchConfig& cfg, const CellGenotype& cell);
std::uint64_t train_seed_for(const SearchConfig& cfg, const CellGenotype& cell);
std::uint64_t mgm_seed_for(const SearchConfig& cfg, const CellGenotype& cell);
// Fixed seeded scoring batch drawn from the training split (even size).
Batch scoring_batch(const Dataset& train, const SearchConfig& cfg);

// Scores one genotype at random init.
TrialRecord score_genotype(const CellGenotype& cell, const Batch& batch, const SearchConfig& cfg);
// Trains one genotype from its init seed.
EvalCurve train_genotype(const CellGenotype& cell, const DataSplit& data, const SearchConfig& cfg);

// Samples M genotypes, scores each at init, keeps the top k by score
// (ranks_before order), trains them, and returns top1_select's pick.
SearchReport knas_search(const SearchSpace& space, const DataSplit& data, const SearchConfig& cfg);

// Trains budget_k sampled genotypes without scoring and picks the best by
// validation accuracy. Uses the same sampling stream as knas_search.
SearchReport random_search_baseline(const SearchSpace& space, const DataSplit& data, int budget_k,
                                    const SearchConfig& cfg);

// (M x mean training time) / (total scoring time + k x mean training time).
double speedup_accounting(const SearchReport& report);

}  // namespace knas
