#include "knas/persist.hpp"

#include "knas/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace knas {

namespace fs = std::filesystem;

namespace {

Json real_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
double real_from(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

template <typename T>
T required(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("report is missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report field '") + key + "': " + e.what());
  }
}

void check_schema(const Json& j) {
  if (!j.is_object()) throw FormatError("report is not a JSON object");
  const int version = required<int>(j, "schema_version");
  if (version != kSchemaVersion) throw FormatError("unsupported report schema_version " + std::to_string(version));
}

std::vector<TrialRecord> trials_from(const Json& j) {
  std::vector<TrialRecord> out;
  if (!j.contains("trials") || !j.at("trials").is_array()) throw FormatError("report has no trials array");
  for (const auto& t : j.at("trials")) out.push_back(trial_from_json(t));
  return out;
}

}  // namespace

Json to_json(const MgmScore& score, bool with_timings) {
  Json j;
  j["value"] = score.value ? Json(*score.value) : Json(nullptr);
  j["estimator"] = estimator_name(score.estimator);
  j["numeric_ok"] = score.numeric_ok;
  if (!score.failure.empty()) j["failure"] = score.failure;
  if (with_timings) j["wall_time"] = score.wall_time;
  return j;
}

MgmScore mgm_score_from_json(const Json& j) {
  MgmScore s;
  if (!j.contains("value")) throw FormatError("score is missing field 'value'");
  if (!j.at("value").is_null()) s.value = j.at("value").get<double>();
  try {
    s.estimator = parse_estimator(required<std::string>(j, "estimator"));
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  s.numeric_ok = required<bool>(j, "numeric_ok");
  if (j.contains("failure")) s.failure = j.at("failure").get<std::string>();
  if (j.contains("wall_time")) s.wall_time = j.at("wall_time").get<double>();
  return s;
}

Json to_json(const EvalCurve& curve, bool with_timings) {
  Json j;
  j["train_loss"] = curve.train_loss;
  j["val_accuracy"] = curve.val_accuracy;
  j["val_loss"] = curve.val_loss;
  j["diverged"] = curve.diverged;
  if (with_timings) j["wall_time"] = curve.wall_time;
  return j;
}

EvalCurve eval_curve_from_json(const Json& j) {
  EvalCurve c;
  c.train_loss = required<std::vector<double>>(j, "train_loss");
  c.val_accuracy = required<std::vector<double>>(j, "val_accuracy");
  c.val_loss = required<std::vector<double>>(j, "val_loss");
  c.diverged = required<bool>(j, "diverged");
  if (j.contains("wall_time")) c.wall_time = j.at("wall_time").get<double>();
  return c;
}

Json to_json(const TrialRecord& t, bool with_timings) {
  Json j;
  j["genotype"] = t.genotype.to_string();
  j["genotype_id"] = t.genotype.index();
  j["seed"] = t.seed;
  j["mgm"] = to_json(t.score, with_timings);
  j["mgm_rank"] = t.mgm_rank;
  if (t.trained()) {
    j["final_val_accuracy"] = t.curve->final_val_accuracy();
    j["final_train_loss"] = t.curve->final_train_loss();
  }
  if (t.curve) j["curve"] = to_json(*t.curve, with_timings);
  return j;
}

TrialRecord trial_from_json(const Json& j) {
  TrialRecord t;
  try {
    t.genotype = CellGenotype::parse(required<std::string>(j, "genotype"));
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  if (j.contains("genotype_id") && j.at("genotype_id").get<int>() != t.genotype.index())
    throw FormatError("genotype_id does not match genotype text '" + t.genotype.to_string() + "'");
  t.seed = required<std::uint64_t>(j, "seed");
  if (!j.contains("mgm")) throw FormatError("trial is missing field 'mgm'");
  t.score = mgm_score_from_json(j.at("mgm"));
  t.mgm_rank = required<int>(j, "mgm_rank");
  if (j.contains("curve")) t.curve = eval_curve_from_json(j.at("curve"));
  return t;
}

Json to_json(const SearchConfig& cfg) {
  Json j;
  j["max_iterations"] = cfg.max_iterations;
  j["k"] = cfg.k;
  j["seed"] = cfg.seed;
  j["scoring_batch"] = cfg.scoring_batch;
  j["width"] = cfg.width;
  j["mgm"] = {{"estimator", estimator_name(cfg.mgm.estimator)},
              {"gradient_mode", gradient_mode_name(cfg.mgm.gradient_mode)},
              {"per_layer_samples", cfg.mgm.per_layer_samples},
              {"seed", cfg.mgm.seed}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"objective", objective_name(cfg.train.objective)},
                {"seed", cfg.train.seed}};
  j["arch"] = {{"input_shape", cfg.arch.input_shape},
               {"num_cells", cfg.arch.num_cells},
               {"head", cfg.arch.head.kind == HeadKind::classifier ? "classifier" : "scalar"},
               {"classes", cfg.arch.head.classes},
               {"bias", cfg.arch.bias}};
  return j;
}

SearchConfig search_config_from_json(const Json& j) {
  SearchConfig cfg;
  try {
    cfg.max_iterations = required<int>(j, "max_iterations");
    cfg.k = required<int>(j, "k");
    cfg.seed = required<std::uint64_t>(j, "seed");
    cfg.scoring_batch = required<int>(j, "scoring_batch");
    cfg.width = required<int>(j, "width");
    const Json& m = j.at("mgm");
    cfg.mgm.estimator = parse_estimator(required<std::string>(m, "estimator"));
    cfg.mgm.gradient_mode = parse_gradient_mode(required<std::string>(m, "gradient_mode"));
    cfg.mgm.per_layer_samples = required<int>(m, "per_layer_samples");
    cfg.mgm.seed = required<std::uint64_t>(m, "seed");
    const Json& t = j.at("train");
    cfg.train.epochs = required<int>(t, "epochs");
    cfg.train.lr = required<double>(t, "lr");
    cfg.train.batch_size = required<int>(t, "batch_size");
    cfg.train.objective = parse_objective(required<std::string>(t, "objective"));
    cfg.train.seed = required<std::uint64_t>(t, "seed");
    const Json& a = j.at("arch");
    cfg.arch.input_shape = required<Shape>(a, "input_shape");
    cfg.arch.num_cells = required<int>(a, "num_cells");
    const std::string head = required<std::string>(a, "head");
    if (head != "classifier" && head != "scalar") throw FormatError("unknown head kind '" + head + "'");
    cfg.arch.head.kind = head == "classifier" ? HeadKind::classifier : HeadKind::scalar;
    cfg.arch.head.classes = required<int>(a, "classes");
    cfg.arch.bias = required<bool>(a, "bias");
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

Json to_json(const CorrelationReport& r) {
  Json j;
  j["spearman_rho"] = r.rho;
  j["p_value"] = r.p_value;
  j["n"] = r.n;
  j["permutations"] = r.permutations;
  j["xs"] = r.xs;
  j["ys"] = r.ys;
  return j;
}

CorrelationReport correlation_from_json(const Json& j) {
  CorrelationReport r;
  r.rho = required<double>(j, "spearman_rho");
  r.p_value = required<double>(j, "p_value");
  r.n = required<Index>(j, "n");
  r.permutations = required<int>(j, "permutations");
  r.xs = required<std::vector<double>>(j, "xs");
  r.ys = required<std::vector<double>>(j, "ys");
  return r;
}

Json to_json(const RankGroup& g) {
  return Json{{"group", g.group},
              {"size", g.size},
              {"mean_val_accuracy", g.mean_accuracy},
              {"min_mgm", real_or_null(g.min_mgm)},
              {"max_mgm", real_or_null(g.max_mgm)}};
}

RankGroup rank_group_from_json(const Json& j) {
  RankGroup g;
  g.group = required<int>(j, "group");
  g.size = required<Index>(j, "size");
  g.mean_accuracy = required<double>(j, "mean_val_accuracy");
  g.min_mgm = real_from(j.at("min_mgm"));
  g.max_mgm = real_from(j.at("max_mgm"));
  return g;
}

Json to_json(const SearchReport& r, bool with_timings) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "search";
  j["config"] = to_json(r.config);
  j["search"] = {{"policy", policy_name(r.policy)},
                 {"best_genotype", r.best.to_string()},
                 {"best_final_val_accuracy", r.best_trial().curve->final_val_accuracy()},
                 {"trained", r.trained_count()},
                 {"k_equals_m", r.k_equals_m},
                 {"fewer_viable", r.fewer_viable}};
  j["trials"] = Json::array();
  for (const auto& t : r.trials) j["trials"].push_back(to_json(t, with_timings));
  if (with_timings) {
    j["timings"] = {{"scoring_wall_time", r.scoring_wall_time}, {"training_wall_time", r.training_wall_time}};
  } else {
    j["timings"] = "timings.json";
  }
  return j;
}

SearchReport search_report_from_json(const Json& j) {
  check_schema(j);
  if (required<std::string>(j, "kind") != "search") throw FormatError("report kind is not 'search'");
  SearchReport r;
  r.config = search_config_from_json(j.at("config"));
  const Json& s = j.at("search");
  try {
    r.policy = parse_policy(required<std::string>(s, "policy"));
    r.best = CellGenotype::parse(required<std::string>(s, "best_genotype"));
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  r.k_equals_m = required<bool>(s, "k_equals_m");
  r.fewer_viable = required<bool>(s, "fewer_viable");
  r.trials = trials_from(j);
  if (j.contains("timings") && j.at("timings").is_object()) {
    r.scoring_wall_time = required<double>(j.at("timings"), "scoring_wall_time");
    r.training_wall_time = required<double>(j.at("timings"), "training_wall_time");
  }
  return r;
}

Json to_json(const TrialSet& set, bool with_timings) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = set.kind;
  j["config"] = to_json(set.config);
  j["trials"] = Json::array();
  for (const auto& t : set.trials) j["trials"].push_back(to_json(t, with_timings));
  if (set.correlation) j["correlation"] = to_json(*set.correlation);
  if (!set.groups.empty()) {
    j["groups"] = Json::array();
    for (const auto& g : set.groups) j["groups"].push_back(to_json(g));
  }
  j["timings"] = with_timings ? timings_json(set.trials) : Json("timings.json");
  return j;
}

TrialSet trial_set_from_json(const Json& j) {
  check_schema(j);
  TrialSet set;
  set.kind = required<std::string>(j, "kind");
  if (set.kind == "search") throw FormatError("search reports are read with search_report_from_json");
  set.config = search_config_from_json(j.at("config"));
  set.trials = trials_from(j);
  if (j.contains("correlation")) set.correlation = correlation_from_json(j.at("correlation"));
  if (j.contains("groups"))
    for (const auto& g : j.at("groups")) set.groups.push_back(rank_group_from_json(g));
  return set;
}

Json timings_json(const std::vector<TrialRecord>& trials) {
  Json j;
  double scoring = 0.0, training = 0.0;
  Json per = Json::array();
  for (const auto& t : trials) {
    scoring += t.score.wall_time;
    Json row{{"genotype", t.genotype.to_string()}, {"scoring_wall_time", t.score.wall_time}};
    if (t.curve) {
      training += t.curve->wall_time;
      row["training_wall_time"] = t.curve->wall_time;
    }
    per.push_back(std::move(row));
  }
  j["scoring_wall_time"] = scoring;
  j["training_wall_time"] = training;
  j["trials"] = std::move(per);
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json parse_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

bool write_text_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (fs::exists(path, ec)) {
    std::ifstream in(path, std::ios::binary);
    const std::string old((std::istreambuf_iterator<char>(in)), {});
    if (old == content) return true;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
  return false;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trials_csv(const std::vector<TrialRecord>& trials) {
  std::string out = "genotype,mgm,rank,val_acc\n";
  for (const auto& t : trials) {
    out += t.genotype.to_string() + ',';
    out += t.score.value ? format_real(*t.score.value) : (t.score.numeric_ok ? "" : "nan");
    out += ',' + std::to_string(t.mgm_rank) + ',';
    if (t.trained()) out += format_real(t.curve->final_val_accuracy());
    out += '\n';
  }
  return out;
}

std::string groups_csv(const std::vector<RankGroup>& groups) {
  std::string out = "group,size,mean_val_acc,min_mgm,max_mgm\n";
  for (const auto& g : groups)
    out += std::to_string(g.group) + ',' + std::to_string(g.size) + ',' + format_real(g.mean_accuracy) + ',' +
           format_real(g.min_mgm) + ',' + format_real(g.max_mgm) + '\n';
  return out;
}

std::string trajectory_csv(const FlowTrajectory& traj) {
  std::string out = "t,loss,lambda_min,bound\n";
  for (std::size_t k = 0; k < traj.size(); ++k)
    out += format_real(traj.times[k]) + ',' + format_real(traj.losses[k]) + ',' + format_real(traj.lambda_mins[k]) +
           ',' + format_real(traj.bound_values[k]) + '\n';
  return out;
}

FlowTrajectory parse_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,loss,lambda_min,bound", 0) != 0)
    throw FormatError("trajectory CSV must start with the header 't,loss,lambda_min,bound'");
  FlowTrajectory traj;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::istringstream fields(line);
    std::string cell;
    double v[4];
    for (int c = 0; c < 4; ++c) {
      if (!std::getline(fields, cell, ','))
        throw FormatError("trajectory CSV line " + std::to_string(row) + " has fewer than 4 fields");
      try {
        std::size_t used = 0;
        v[c] = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw FormatError("trajectory CSV line " + std::to_string(row) + ": bad number '" + cell + "'");
      }
    }
    traj.times.push_back(v[0]);
    traj.losses.push_back(v[1]);
    traj.lambda_mins.push_back(v[2]);
    traj.bound_values.push_back(v[3]);
  }
  if (traj.times.empty()) throw FormatError("trajectory CSV has no rows");
  if (traj.times.size() > 1) traj.step = traj.times[1] - traj.times[0];
  return traj;
}

}  // namespace knas
