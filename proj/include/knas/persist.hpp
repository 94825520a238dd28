#pragma once

#include "knas/convergence.hpp"
#include "knas/search.hpp"
#include "knas/stats.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace knas {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Report JSON (schema v1):
//   {schema_version, kind, config, trials: [TrialRecord], search?, correlation?,
//    groups?, timings}
// Wall-clock fields only appear when with_timings is set; the files the CLI
// writes keep them in a separate timings.json so that reports are
// byte-reproducible.

Json to_json(const MgmScore& score, bool with_timings);
MgmScore mgm_score_from_json(const Json& j);

Json to_json(const EvalCurve& curve, bool with_timings);
EvalCurve eval_curve_from_json(const Json& j);

Json to_json(const TrialRecord& trial, bool with_timings);
TrialRecord trial_from_json(const Json& j);

Json to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const Json& j);

Json to_json(const CorrelationReport& report);
CorrelationReport correlation_from_json(const Json& j);

Json to_json(const RankGroup& group);
RankGroup rank_group_from_json(const Json& j);

Json to_json(const SearchReport& report, bool with_timings);
SearchReport search_report_from_json(const Json& j);

// Scored and/or trained architectures outside a search (score and correlate runs).
struct TrialSet {
  std::string kind = "score";
  SearchConfig config;
  std::vector<TrialRecord> trials;
  std::optional<CorrelationReport> correlation;
  std::vector<RankGroup> groups;

  friend bool operator==(const TrialSet&, const TrialSet&) = default;
};

Json to_json(const TrialSet& set, bool with_timings);
TrialSet trial_set_from_json(const Json& j);

// Per-trial and aggregate wall times.
Json timings_json(const std::vector<TrialRecord>& trials);

std::string dump(const Json& j);
Json parse_json_file(const std::filesystem::path& path);
// Returns true when the file already held exactly these bytes.
bool write_text_file(const std::filesystem::path& path, const std::string& content);

// %.17g, round-trips exactly.
std::string format_real(double v);

// trials.csv: genotype, mgm, rank, val_acc
std::string trials_csv(const std::vector<TrialRecord>& trials);
// groups.csv: group, size, mean_val_acc, min_mgm, max_mgm
std::string groups_csv(const std::vector<RankGroup>& groups);
// trajectory.csv: t, loss, lambda_min, bound
std::string trajectory_csv(const FlowTrajectory& traj);
FlowTrajectory parse_trajectory_csv(const std::string& text);

}  // namespace knas
