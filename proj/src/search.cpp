#include "knas/search.hpp"

#include "knas/errors.hpp"
#include "knas/parallel.hpp"
#include "knas/random.hpp"

#include <algorithm>
#include <numeric>

namespace knas {

SearchSpace::SearchSpace() {
  cells_.reserve(kCellSpaceSize);
  for (const CellGenotype& g : enumerate_cells()) cells_.push_back(g);
}

SearchSpace::SearchSpace(std::vector<CellGenotype> cells) : cells_(std::move(cells)) {
  if (cells_.empty()) throw ContractError("search space is empty");
}

std::vector<CellGenotype> SearchSpace::sample(std::uint64_t seed, int n) const {
  if (n < 0 || static_cast<std::size_t>(n) > cells_.size())
    throw ContractError("cannot sample " + std::to_string(n) + " distinct genotypes from a space of " +
                        std::to_string(cells_.size()));
  std::vector<std::size_t> pool(cells_.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  auto rng = make_rng(seed, Stream::arch_sampling);
  std::vector<CellGenotype> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    // same draw sequence as sample_cells
    std::uniform_int_distribution<int> pick(static_cast<int>(i), static_cast<int>(cells_.size()) - 1);
    std::swap(pool[i], pool[static_cast<std::size_t>(pick(rng))]);
    out.push_back(cells_[pool[i]]);
  }
  return out;
}

std::string_view policy_name(Policy p) { return p == Policy::knas ? "knas" : "random"; }

Policy parse_policy(std::string_view name) {
  if (name == "knas") return Policy::knas;
  if (name == "random") return Policy::random;
  throw ContractError("unknown policy '" + std::string(name) + "' (expected knas|random)");
}

std::size_t SearchReport::trained_count() const {
  return static_cast<std::size_t>(std::count_if(trials.begin(), trials.end(), [](const TrialRecord& t) { return t.curve.has_value(); }));
}

const TrialRecord& SearchReport::best_trial() const {
  for (const auto& t : trials)
    if (t.genotype == best && t.curve) return t;
  throw ContractError("report has no trained trial for its best genotype");
}

Blueprint search_blueprint(const SearchConfig& cfg, const CellGenotype& cell) {
  return make_blueprints(Topology::chain, cfg.width, cell, cfg.arch).front();
}

std::uint64_t init_seed_for(const SearchConfig& cfg, const CellGenotype& cell) {
  return derive_seed(cfg.seed, Stream::init, {static_cast<std::uint64_t>(cell.index())});
}

std::uint64_t train_seed_for(const SearchConfig& cfg, const CellGenotype& cell) {
  return derive_seed(cfg.seed, Stream::training, {static_cast<std::uint64_t>(cell.index())});
}

std::uint64_t mgm_seed_for(const SearchConfig& cfg, const CellGenotype& cell) {
  return derive_seed(cfg.seed, Stream::mgm_sampling, {static_cast<std::uint64_t>(cell.index())});
}

Batch scoring_batch(const Dataset& train, const SearchConfig& cfg) {
  Index n = std::min<Index>(cfg.scoring_batch, train.size());
  if (n % 2) --n;
  if (n < 2) throw ContractError("scoring batch needs at least 2 training examples");
  std::vector<Index> rows(static_cast<std::size_t>(train.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  auto rng = make_rng(cfg.seed, Stream::scoring_batch);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(static_cast<std::size_t>(n));
  return train.batch(rows);
}

TrialRecord score_genotype(const CellGenotype& cell, const Batch& batch, const SearchConfig& cfg) {
  TrialRecord rec;
  rec.genotype = cell;
  rec.seed = init_seed_for(cfg, cell);
  NetworkInstance net = instantiate(search_blueprint(cfg, cell), rec.seed);
  MgmConfig mgm = cfg.mgm;
  mgm.seed = mgm_seed_for(cfg, cell);
  rec.score = mgm_score(net, batch, mgm);
  return rec;
}

EvalCurve train_genotype(const CellGenotype& cell, const DataSplit& data, const SearchConfig& cfg) {
  const NetworkInstance net = instantiate(search_blueprint(cfg, cell), init_seed_for(cfg, cell));
  TrainConfig train = cfg.train;
  train.seed = train_seed_for(cfg, cell);
  return short_train(net, data.train, data.val, train);
}

namespace {

void validate(const SearchConfig& cfg) {
  if (cfg.max_iterations < 1) throw ContractError("max_iterations (M) must be >= 1");
  if (cfg.k < 1 || cfg.k > cfg.max_iterations) throw ContractError("k must lie in [1, M]");
}

void train_and_select(SearchReport& report, const std::vector<std::size_t>& to_train, const DataSplit& data) {
  const SearchConfig& cfg = report.config;
  parallel_for(to_train.size(), cfg.threads, [&](std::size_t i) {
    TrialRecord& t = report.trials[to_train[i]];
    t.curve = train_genotype(t.genotype, data, cfg);
  });
  std::vector<Candidate> candidates;
  for (std::size_t idx : to_train) {
    report.training_wall_time += report.trials[idx].curve->wall_time;
    candidates.push_back({report.trials[idx].genotype, *report.trials[idx].curve});
  }
  report.best = top1_select(candidates);
}

}  // namespace

SearchReport knas_search(const SearchSpace& space, const DataSplit& data, const SearchConfig& cfg) {
  validate(cfg);
  SearchReport report;
  report.policy = Policy::knas;
  report.config = cfg;
  report.k_equals_m = cfg.k == cfg.max_iterations;

  const std::vector<CellGenotype> sampled = space.sample(cfg.seed, cfg.max_iterations);
  const Batch batch = scoring_batch(data.train, cfg);
  report.trials.resize(sampled.size());
  parallel_for(sampled.size(), cfg.threads,
               [&](std::size_t i) { report.trials[i] = score_genotype(sampled[i], batch, cfg); });
  for (const auto& t : report.trials) report.scoring_wall_time += t.score.wall_time;

  std::vector<std::size_t> kept;
  for (std::size_t idx : assign_mgm_ranks(report.trials))
    if (kept.size() < static_cast<std::size_t>(cfg.k) && report.trials[idx].score.numeric_ok) kept.push_back(idx);
  report.fewer_viable = kept.size() < static_cast<std::size_t>(cfg.k);
  if (kept.empty()) throw ContractError("no viable candidate: every sampled architecture failed numerically");
  train_and_select(report, kept, data);
  return report;
}

SearchReport random_search_baseline(const SearchSpace& space, const DataSplit& data, int budget_k,
                                    const SearchConfig& cfg) {
  if (budget_k < 1) throw ContractError("random search budget must be >= 1");
  SearchReport report;
  report.policy = Policy::random;
  report.config = cfg;
  report.config.max_iterations = budget_k;
  report.config.k = budget_k;
  report.k_equals_m = true;
  for (const CellGenotype& g : space.sample(cfg.seed, budget_k)) {
    TrialRecord t;
    t.genotype = g;
    t.seed = init_seed_for(cfg, g);
    report.trials.push_back(std::move(t));
  }
  std::vector<std::size_t> all(report.trials.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  train_and_select(report, all, data);
  return report;
}

double speedup_accounting(const SearchReport& report) {
  const std::size_t trained = report.trained_count();
  if (trained == 0 || !(report.training_wall_time > 0.0))
    throw ContractError("speedup ratio is undefined without measured training time");
  const double mean_train = report.training_wall_time / static_cast<double>(trained);
  const double full = static_cast<double>(report.trials.size()) * mean_train;
  const double actual = report.scoring_wall_time + static_cast<double>(trained) * mean_train;
  return full / actual;
}

}  // namespace knas
