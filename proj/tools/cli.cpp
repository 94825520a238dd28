#include "cli.hpp"

#include "knas/convergence.hpp"
#include "knas/dataset.hpp"
#include "knas/errors.hpp"
#include "knas/parallel.hpp"
#include "knas/persist.hpp"
#include "knas/random.hpp"
#include "knas/search.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace knas::cli {

namespace fs = std::filesystem;

Settings default_settings() {
  return {
      {"seed", "0"},
      {"data.dir", ""},
      {"data.source", "synthetic"},
      {"data.cifar_dir", ""},
      {"data.downsample", "1"},
      {"data.classes", "4"},
      {"data.n", "512"},
      {"data.val_fraction", "0.5"},
      {"data.shape", "3x8x8"},
      {"data.noise", "1"},
      {"data.seed", "1"},
      {"arch.width", "8"},
      {"arch.num_cells", "3"},
      {"arch.bias", "true"},
      {"mgm.estimator", "split_halves"},
      {"mgm.samples", "50"},
      {"mgm.mode", "loss"},
      {"mgm.batch", "32"},
      {"train.epochs", "20"},
      {"train.lr", "0.005"},
      {"train.batch", "32"},
      {"search.policy", "knas"},
      {"search.m", "100"},
      {"search.k", "20"},
      {"score.arch", ""},
      {"score.sample", "0"},
      {"correlate.from", ""},
      {"correlate.sample", "0"},
      {"correlate.train", "false"},
      {"correlate.groups", "4"},
      {"correlate.permutations", "10000"},
      {"bound.net", "linear"},
      {"bound.arch", ""},
      {"bound.width", "64"},
      {"bound.layers", "2"},
      {"bound.n", "16"},
      {"bound.count", "1"},
      {"bound.shape", "8"},
      {"bound.horizon", "1"},
      {"bound.step", "0"},
      {"bound.record_every", "0.1"},
      {"bound.tolerance", "1e-06"},
      {"bound.replay", ""},
      {"report.from", ""},
  };
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

void set_key(Settings& s, const std::string& key, const std::string& value) {
  if (!s.count(key)) throw ContractError("unknown setting '" + key + "'");
  s[key] = value;
}

void apply_assignment(Settings& s, const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ContractError(where + ": expected key=value, got '" + text + "'");
  set_key(s, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
}

const std::map<std::string, std::vector<std::string>>& sections() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"gen-data", {"data"}},
      {"score", {"seed", "data", "arch", "mgm", "score"}},
      {"search", {"seed", "data", "arch", "mgm", "train", "search"}},
      {"correlate", {"seed", "data", "arch", "mgm", "train", "correlate"}},
      {"verify-bound", {"seed", "bound"}},
      {"report", {"report"}},
  };
  return table;
}

// typed access

const std::string& raw(const Settings& s, const std::string& key) {
  const auto it = s.find(key);
  if (it == s.end()) throw ContractError("unknown setting '" + key + "'");
  return it->second;
}

template <typename T>
T number(const Settings& s, const std::string& key) {
  const std::string& v = raw(s, key);
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, double>)
      out = std::stod(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      out = std::stoull(v, &used);
    else
      out = static_cast<T>(std::stoll(v, &used));
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError("setting " + key + " = '" + v + "' is not a valid number");
  }
}

int integer(const Settings& s, const std::string& key) { return number<int>(s, key); }
double real(const Settings& s, const std::string& key) { return number<double>(s, key); }
std::uint64_t unsigned_int(const Settings& s, const std::string& key) {
  if (!raw(s, key).empty() && raw(s, key)[0] == '-') throw ContractError("setting " + key + " must be non-negative");
  return number<std::uint64_t>(s, key);
}

bool boolean(const Settings& s, const std::string& key) {
  const std::string& v = raw(s, key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("setting " + key + " = '" + v + "' is not a boolean");
}

Shape shape(const Settings& s, const std::string& key) {
  const std::string& v = raw(s, key);
  Shape out;
  std::stringstream in(v);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ContractError("setting " + key + " = '" + v + "' is not a shape like 3x8x8");
    }
  }
  if (out.empty()) throw ContractError("setting " + key + " is empty");
  shape_size(out);
  return out;
}

// outputs

struct Output {
  std::optional<fs::path> dir;
  std::ostream& out;

  void write(const std::string& name, const std::string& content) const {
    if (dir) write_text_file(*dir / name, content);
  }
};

void persist_config(const Output& o, const Settings& s, const std::string& sub) {
  o.write("config.txt", render_settings(s, sub));
}

void write_reports(const Output& o, const Json& report, const Json& timings) {
  o.write("report.json", dump(report));
  o.write("timings.json", dump(timings));
}

// data and configs

SyntheticSpec synthetic_spec(const Settings& s) {
  SyntheticSpec spec;
  spec.classes = integer(s, "data.classes");
  const int n = integer(s, "data.n");
  const double fraction = real(s, "data.val_fraction");
  if (n < 2 || !(fraction > 0.0 && fraction < 1.0))
    throw ContractError("data.n must be >= 2 and data.val_fraction inside (0, 1)");
  spec.val_examples = static_cast<int>(std::lround(n * fraction));
  spec.train_examples = n - spec.val_examples;
  spec.input_shape = shape(s, "data.shape");
  spec.noise = real(s, "data.noise");
  spec.seed = unsigned_int(s, "data.seed");
  return spec;
}

DataSplit ingest(const Settings& s) {
  const int n = integer(s, "data.n");
  CifarOptions opts;
  opts.val_count = static_cast<Index>(std::lround(n * real(s, "data.val_fraction")));
  opts.train_count = n - opts.val_count;
  opts.downsample = integer(s, "data.downsample");
  const std::string dir = raw(s, "data.cifar_dir");
  if (dir.empty()) throw ContractError("data.source = cifar10 needs data.cifar_dir (--cifar DIR)");
  return ingest_cifar10(dir, opts);
}

DataSplit load_data(const Settings& s) {
  if (!raw(s, "data.dir").empty()) return read_dataset(raw(s, "data.dir"));
  const std::string source = raw(s, "data.source");
  if (source == "cifar10") return ingest(s);
  if (source != "synthetic") throw ContractError("data.source must be synthetic or cifar10, got '" + source + "'");
  return make_synthetic(synthetic_spec(s));
}

SearchConfig search_config(const Settings& s, const DataSplit& data, int threads) {
  SearchConfig cfg;
  cfg.seed = unsigned_int(s, "seed");
  cfg.max_iterations = integer(s, "search.m");
  cfg.k = integer(s, "search.k");
  cfg.mgm.estimator = parse_estimator(raw(s, "mgm.estimator"));
  cfg.mgm.per_layer_samples = integer(s, "mgm.samples");
  cfg.mgm.gradient_mode = parse_gradient_mode(raw(s, "mgm.mode"));
  cfg.scoring_batch = integer(s, "mgm.batch");
  cfg.train.epochs = integer(s, "train.epochs");
  cfg.train.lr = real(s, "train.lr");
  cfg.train.batch_size = integer(s, "train.batch");
  cfg.width = integer(s, "arch.width");
  const Shape& full = data.train.inputs.shape();
  cfg.arch.input_shape = Shape(full.begin() + 1, full.end());
  cfg.arch.num_cells = integer(s, "arch.num_cells");
  cfg.arch.head.classes = data.train.classes;
  cfg.arch.bias = boolean(s, "arch.bias");
  cfg.threads = threads;
  return cfg;
}

std::vector<TrialRecord> score_all(const std::vector<CellGenotype>& cells, const DataSplit& data,
                                   const SearchConfig& cfg) {
  const Batch batch = scoring_batch(data.train, cfg);
  std::vector<TrialRecord> trials(cells.size());
  parallel_for(cells.size(), cfg.threads, [&](std::size_t i) { trials[i] = score_genotype(cells[i], batch, cfg); });
  assign_mgm_ranks(trials);
  return trials;
}

std::string score_text(const MgmScore& s) {
  return s.value ? format_real(*s.value) : "failed (" + s.failure + ")";
}

// subcommands

int cmd_gen_data(const Settings& s, const Output& o) {
  persist_config(o, s, "gen-data");
  DataSplit data;
  if (raw(s, "data.source") == "cifar10") {
    data = ingest(s);
  } else {
    data = make_synthetic(synthetic_spec(s));
  }
  const bool unchanged = write_dataset(data, *o.dir);
  o.out << "dataset: " << data.train.size() << " train / " << data.val.size() << " val examples, "
        << data.train.classes << " classes, input " << shape_string(data.train.inputs.shape()) << "\n";
  o.out << "wrote " << o.dir->string() << (unchanged ? " (unchanged: identical files already present)" : "") << "\n";
  return kExitOk;
}

int cmd_score(const Settings& s, const Output& o, int threads) {
  persist_config(o, s, "score");
  std::vector<CellGenotype> cells;
  const int sample = integer(s, "score.sample");
  if (!raw(s, "score.arch").empty()) {
    cells.push_back(CellGenotype::parse(raw(s, "score.arch")));
  } else if (sample > 0) {
    cells = SearchSpace().sample(unsigned_int(s, "seed"), sample);
  } else {
    throw ContractError("score needs --arch GENOTYPE or --sample N");
  }
  const DataSplit data = load_data(s);
  TrialSet set;
  set.kind = "score";
  set.config = search_config(s, data, threads);
  set.trials = score_all(cells, data, set.config);

  const Json report = to_json(set, false);
  write_reports(o, report, timings_json(set.trials));
  o.write("trials.csv", trials_csv(set.trials));
  if (!o.dir) {
    o.out << dump(report);
  } else {
    for (const auto& t : set.trials)
      o.out << t.genotype.to_string() << " mgm=" << score_text(t.score) << " rank=" << t.mgm_rank << "\n";
    o.out << set.trials.size() << " records written to " << o.dir->string() << "\n";
  }
  return kExitOk;
}

int cmd_search(const Settings& s, const Output& o, int threads) {
  persist_config(o, s, "search");
  const Policy policy = parse_policy(raw(s, "search.policy"));
  const DataSplit data = load_data(s);
  const SearchConfig cfg = search_config(s, data, threads);
  const SearchSpace space;
  const SearchReport report =
      policy == Policy::knas ? knas_search(space, data, cfg) : random_search_baseline(space, data, cfg.k, cfg);

  Json timings = timings_json(report.trials);
  timings["scoring_wall_time"] = report.scoring_wall_time;
  timings["training_wall_time"] = report.training_wall_time;
  if (policy == Policy::knas) timings["speedup"] = speedup_accounting(report);
  write_reports(o, to_json(report, false), timings);
  o.write("trials.csv", trials_csv(report.trials));

  o.out << "policy " << policy_name(policy) << ": " << report.trials.size() << " sampled, " << report.trained_count()
        << " trained\n";
  if (report.k_equals_m && policy == Policy::knas) o.out << "note: k = M, the score filter keeps every candidate\n";
  if (report.fewer_viable) o.out << "warning: fewer than k candidates had a finite score\n";
  o.out << "best " << report.best.to_string() << " val_acc=" << format_real(report.best_trial().curve->final_val_accuracy())
        << "\n";
  if (!o.dir) o.out << dump(to_json(report, false));
  return kExitOk;
}

fs::path report_path(const std::string& from) {
  fs::path p(from);
  if (fs::is_directory(p)) p /= "report.json";
  return p;
}

int cmd_correlate(const Settings& s, const Output& o, int threads) {
  persist_config(o, s, "correlate");
  const DataSplit data = load_data(s);
  TrialSet set;
  set.kind = "correlate";
  set.config = search_config(s, data, threads);

  if (!raw(s, "correlate.from").empty()) {
    const Json prior = parse_json_file(report_path(raw(s, "correlate.from")));
    std::vector<TrialRecord> trials;
    SearchConfig prior_cfg;
    if (prior.value("kind", "") == "search") {
      const SearchReport r = search_report_from_json(prior);
      trials = r.trials;
      prior_cfg = r.config;
    } else {
      const TrialSet t = trial_set_from_json(prior);
      trials = t.trials;
      prior_cfg = t.config;
    }
    // architecture and scoring follow the prior run; training follows this one
    prior_cfg.train = set.config.train;
    prior_cfg.threads = threads;
    set.config = prior_cfg;
    std::vector<std::size_t> untrained;
    for (std::size_t i = 0; i < trials.size(); ++i)
      if (!trials[i].trained()) untrained.push_back(i);
    if (!untrained.empty() && !boolean(s, "correlate.train"))
      throw ContractError(std::to_string(untrained.size()) + " of " + std::to_string(trials.size()) +
                          " records in the input run have no accuracies; pass --train to train them");
    parallel_for(untrained.size(), threads, [&](std::size_t i) {
      TrialRecord& t = trials[untrained[i]];
      t.curve = train_genotype(t.genotype, data, set.config);
    });
    set.trials = std::move(trials);
  } else if (integer(s, "correlate.sample") > 0) {
    const auto cells = SearchSpace().sample(set.config.seed, integer(s, "correlate.sample"));
    set.trials = score_all(cells, data, set.config);
    parallel_for(set.trials.size(), threads, [&](std::size_t i) {
      set.trials[i].curve = train_genotype(set.trials[i].genotype, data, set.config);
    });
  } else {
    throw ContractError("correlate needs --from RUN or --sample N");
  }

  std::vector<double> xs, ys;
  std::size_t skipped = 0;
  for (const auto& t : set.trials) {
    if (t.score.value && t.trained()) {
      xs.push_back(*t.score.value);
      ys.push_back(t.curve->final_val_accuracy());
    } else {
      ++skipped;
    }
  }
  set.correlation = spearman(xs, ys, set.config.seed, integer(s, "correlate.permutations"));
  const int groups = integer(s, "correlate.groups");
  if (groups > 0) set.groups = rank_group_summary(set.trials, groups);

  write_reports(o, to_json(set, false), timings_json(set.trials));
  o.write("trials.csv", trials_csv(set.trials));
  if (!set.groups.empty()) o.write("groups.csv", groups_csv(set.groups));

  o.out << "spearman rho=" << format_real(set.correlation->rho) << " p=" << format_real(set.correlation->p_value)
        << " n=" << set.correlation->n << "\n";
  if (skipped) o.out << "note: " << skipped << " records without a finite score or accuracy were left out\n";
  for (const auto& g : set.groups)
    o.out << "group " << g.group << " size=" << g.size << " mean_val_acc=" << format_real(g.mean_accuracy) << "\n";
  if (!o.dir) o.out << dump(to_json(set, false));
  return kExitOk;
}

Blueprint bound_blueprint(const Settings& s, std::size_t index) {
  const std::string net = raw(s, "bound.net");
  const int width = integer(s, "bound.width");
  const int layers = integer(s, "bound.layers");
  BlueprintOptions opts;
  opts.input_shape = shape(s, "bound.shape");
  opts.head = {HeadKind::scalar, 1};
  if (net == "linear") {
    Blueprint bp = make_blueprints(Topology::mlp, width, {}, opts).front();
    bp.layers_per_cell = 0;
    bp.bias = false;
    return bp;
  }
  const Topology topology = parse_topology(net);
  if (topology == Topology::chain) {
    const CellGenotype cell = raw(s, "bound.arch").empty()
                                  ? sample_cells(unsigned_int(s, "seed"), static_cast<int>(index) + 1).back()
                                  : CellGenotype::parse(raw(s, "bound.arch"));
    return make_blueprints(topology, width, cell, opts).front();
  }
  Blueprint bp = make_blueprints(topology, width, {}, opts).front();
  if (layers < 0 || (topology != Topology::mlp && (layers < kMinLayersPerCell || layers > kMaxLayersPerCell)))
    throw ContractError("bound.layers out of range for topology " + net);
  bp.layers_per_cell = layers;
  return bp;
}

Batch bound_batch(const Settings& s) {
  const int n = integer(s, "bound.n");
  if (n < 2) throw ContractError("bound.n must be >= 2");
  Shape full = shape(s, "bound.shape");
  full.insert(full.begin(), n);
  auto rng = make_rng(unsigned_int(s, "seed"), Stream::flow);
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.kind = TargetKind::regression;
  b.inputs = Tensor(full, 0.0);
  for (Index i = 0; i < b.inputs.size(); ++i) b.inputs[i] = normal(rng);
  b.targets = Tensor({n}, 0.0);
  for (Index i = 0; i < n; ++i) b.targets[i] = normal(rng);
  return b;
}

int replay(const Settings& s, const Output& o) {
  const fs::path path = raw(s, "bound.replay");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  const FlowTrajectory traj = parse_trajectory_csv(text);
  traj.validate();
  const BoundReport r = check_bound(traj, real(s, "bound.tolerance"));
  o.out << "replay " << path.string() << ": " << traj.size() << " points, min margin "
        << format_real(r.min_margin) << "\n";
  for (std::size_t v : r.violations)
    o.out << "violation at index " << v << " (t=" << format_real(traj.times[v])
          << ", loss=" << format_real(traj.losses[v]) << ", bound=" << format_real(traj.bound_values[v]) << ")\n";
  o.out << (r.holds ? "bound holds\n" : "bound violated\n");
  return r.holds ? kExitOk : kExitCheckFailed;
}

int cmd_verify_bound(const Settings& s, const Output& o) {
  persist_config(o, s, "verify-bound");
  if (!raw(s, "bound.replay").empty()) return replay(s, o);

  FlowConfig flow;
  flow.step = real(s, "bound.step");
  flow.horizon = real(s, "bound.horizon");
  flow.record_every = real(s, "bound.record_every");
  const double tol = real(s, "bound.tolerance");
  const int count = integer(s, "bound.count");
  if (count < 1) throw ContractError("bound.count must be >= 1");
  const Batch batch = bound_batch(s);

  Json summary = Json::array();
  int failures = 0;
  for (int i = 0; i < count; ++i) {
    const Blueprint bp = bound_blueprint(s, static_cast<std::size_t>(i));
    NetworkInstance net =
        instantiate(bp, derive_seed(unsigned_int(s, "seed"), Stream::init, {static_cast<std::uint64_t>(i)}));
    Json row{{"index", i}, {"net", raw(s, "bound.net")}, {"parameters", net.parameter_count()}};
    if (bp.topology == Topology::chain) row["arch"] = bp.cells.front().to_string();
    std::string status;
    try {
      const FlowTrajectory traj = gradient_flow(net, batch, flow);
      const BoundReport r = check_bound(traj, tol);
      const std::string name = count == 1 ? "trajectory.csv" : "trajectory_" + std::to_string(i) + ".csv";
      o.write(name, trajectory_csv(traj));
      status = r.holds ? "holds" : "violated";
      row["status"] = status;
      row["step"] = traj.step;
      row["loss0"] = traj.losses.front();
      row["loss_final"] = traj.losses.back();
      row["lambda_min0"] = traj.lambda_mins.front();
      row["min_margin"] = r.min_margin;
      row["violations"] = r.violations;
      o.out << "net " << i << ": " << status << ", min margin " << format_real(r.min_margin) << ", lambda_min(0) "
            << format_real(traj.lambda_mins.front()) << ", loss " << format_real(traj.losses.front()) << " -> "
            << format_real(traj.losses.back()) << "\n";
      for (std::size_t v : r.violations) o.out << "  violation at index " << v << " (t=" << format_real(traj.times[v]) << ")\n";
    } catch (const DivergenceError& e) {
      status = "diverged";
      row["status"] = status;
      row["failure"] = e.what();
      o.out << "net " << i << ": diverged (" << e.what() << ")\n";
    }
    if (status != "holds") ++failures;
    summary.push_back(std::move(row));
  }
  Json report{{"schema_version", kSchemaVersion}, {"kind", "verify-bound"}, {"tolerance", tol}, {"nets", summary}};
  o.write("bound.json", dump(report));
  o.out << (failures ? std::to_string(failures) + " of " + std::to_string(count) + " networks failed the check\n"
                     : "bound holds for all " + std::to_string(count) + " networks\n");
  return failures ? kExitCheckFailed : kExitOk;
}

int cmd_report(const Settings& s, const Output& o) {
  persist_config(o, s, "report");
  if (raw(s, "report.from").empty()) throw ContractError("report needs --from RUN");
  const fs::path path = report_path(raw(s, "report.from"));
  const Json j = parse_json_file(path);
  const std::string kind = j.value("kind", "");
  Json again;
  std::vector<TrialRecord> trials;
  if (kind == "search") {
    const SearchReport r = search_report_from_json(j);
    again = to_json(r, false);
    trials = r.trials;
    o.out << "search (" << policy_name(r.policy) << "): " << r.trials.size() << " sampled, " << r.trained_count()
          << " trained, best " << r.best.to_string() << " val_acc="
          << format_real(r.best_trial().curve->final_val_accuracy()) << "\n";
  } else if (kind == "verify-bound") {
    again = j;
    o.out << "verify-bound: " << j.at("nets").size() << " networks\n";
    for (const auto& n : j.at("nets"))
      o.out << "net " << n.at("index").get<int>() << ": " << n.at("status").get<std::string>() << "\n";
  } else {
    const TrialSet t = trial_set_from_json(j);
    again = to_json(t, false);
    trials = t.trials;
    o.out << kind << ": " << t.trials.size() << " records\n";
    if (t.correlation)
      o.out << "spearman rho=" << format_real(t.correlation->rho) << " p=" << format_real(t.correlation->p_value)
            << " n=" << t.correlation->n << "\n";
    for (const auto& g : t.groups)
      o.out << "group " << g.group << " size=" << g.size << " mean_val_acc=" << format_real(g.mean_accuracy) << "\n";
    if (!t.groups.empty()) o.write("groups.csv", groups_csv(t.groups));
  }
  if (again != j) throw FormatError(path.string() + " does not round-trip; it was edited or written by another version");
  if (!trials.empty()) o.write("trials.csv", trials_csv(trials));
  return kExitOk;
}

struct Binding {
  CLI::Option* option = nullptr;
  std::string key;
  std::string value;
  bool flag = false;
  bool set = false;
};

}  // namespace

Settings parse_config_text(const std::string& text) {
  Settings s = default_settings();
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    apply_assignment(s, line, "config line " + std::to_string(number));
  }
  return s;
}

std::string render_settings(const Settings& settings, const std::string& subcommand) {
  const auto it = sections().find(subcommand);
  if (it == sections().end()) throw ContractError("unknown subcommand '" + subcommand + "'");
  std::string out;
  for (const auto& [key, value] : settings) {
    const std::string section = key.substr(0, key.find('.'));
    if (std::find(it->second.begin(), it->second.end(), section) != it->second.end())
      out += key + " = " + value + "\n";
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"knaskit: training-free architecture scoring and search", "knaskit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "key=value settings file");
  app.add_option("--set", overrides, "override one setting, key=value (repeatable)");
  app.add_option("--threads", threads, "worker threads (default: KNASKIT_THREADS, else all cores)");

  std::deque<Binding> bindings;
  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    Binding& b = bindings.emplace_back();
    b.key = key;
    b.option = sub->add_option(flag, b.value, help + " [" + key + "]");
  };
  auto bind_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    Binding& b = bindings.emplace_back();
    b.key = key;
    b.flag = true;
    b.option = sub->add_flag(flag, b.set, help + " [" + key + "]");
  };
  auto data_options = [&](CLI::App* sub) {
    bind(sub, "--data", "data.dir", "dataset directory written by gen-data (default: synthetic in memory)");
  };
  auto mgm_options = [&](CLI::App* sub) {
    bind(sub, "--estimator", "mgm.estimator", "exact|layer_sampled|split_halves");
    bind(sub, "--samples", "mgm.samples", "sampled coordinates per parameter tensor");
    bind(sub, "--mode", "mgm.mode", "gradient of the loss or of the output: loss|output");
    bind(sub, "--batch", "mgm.batch", "scoring batch size");
    bind(sub, "--width", "arch.width", "channels per cell");
    bind(sub, "--cells", "arch.num_cells", "cells in the chain skeleton");
  };
  auto train_options = [&](CLI::App* sub) {
    bind(sub, "--epochs", "train.epochs", "training epochs per candidate");
    bind(sub, "--lr", "train.lr", "SGD learning rate");
    bind(sub, "--train-batch", "train.batch", "SGD minibatch size");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic (or CIFAR-10 subset) dataset");
  bind(gen, "--classes", "data.classes", "number of classes");
  bind(gen, "--n", "data.n", "total examples, split into train and val");
  bind(gen, "--val-fraction", "data.val_fraction", "share of examples in the val split");
  bind(gen, "--shape", "data.shape", "per-example input shape, e.g. 3x8x8");
  bind(gen, "--noise", "data.noise", "noise scale around the class prototypes");
  bind(gen, "--seed", "data.seed", "data seed");
  bind(gen, "--cifar", "data.cifar_dir", "ingest CIFAR-10 binary batches from this directory");
  bind(gen, "--downsample", "data.downsample", "CIFAR-10 spatial average-pool factor");
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* score = app.add_subcommand("score", "MGM scores at initialization");
  bind(score, "--arch", "score.arch", "genotype, six op names joined by '|'");
  bind(score, "--sample", "score.sample", "score N genotypes sampled with --seed");
  bind(score, "--seed", "seed", "run seed");
  data_options(score);
  mgm_options(score);
  score->add_option("--out", out_dir, "output directory (default: print JSON)");

  CLI::App* search = app.add_subcommand("search", "score-filtered or random architecture search");
  bind(search, "--policy", "search.policy", "knas|random");
  bind(search, "--m", "search.m", "architectures sampled and scored (M)");
  bind(search, "--k", "search.k", "architectures trained (k, also the random budget)");
  bind(search, "--seed", "seed", "run seed");
  data_options(search);
  mgm_options(search);
  train_options(search);
  search->add_option("--out", out_dir, "output directory");

  CLI::App* corr = app.add_subcommand("correlate", "correlate MGM with validation accuracy");
  bind(corr, "--from", "correlate.from", "prior score/search run (directory or report.json)");
  bind_flag(corr, "--train", "correlate.train", "train records that have no accuracy yet");
  bind(corr, "--sample", "correlate.sample", "sample, score and train N genotypes");
  bind(corr, "--groups", "correlate.groups", "MGM rank groups (0 disables)");
  bind(corr, "--permutations", "correlate.permutations", "permutation-test draws");
  bind(corr, "--seed", "seed", "run seed");
  data_options(corr);
  mgm_options(corr);
  train_options(corr);
  corr->add_option("--out", out_dir, "output directory");

  CLI::App* bound = app.add_subcommand("verify-bound", "check the loss-decay bound along gradient flow");
  bind(bound, "--net", "bound.net", "linear|mlp|chain|highway|lookahead|dense");
  bind(bound, "--arch", "bound.arch", "cell genotype for --net chain (default: sampled)");
  bind(bound, "--width", "bound.width", "hidden width");
  bind(bound, "--layers", "bound.layers", "hidden layers (mlp) or layers per cell");
  bind(bound, "--n", "bound.n", "examples in the flow batch");
  bind(bound, "--count", "bound.count", "networks to check");
  bind(bound, "--shape", "bound.shape", "per-example input shape");
  bind(bound, "--horizon", "bound.horizon", "flow end time");
  bind(bound, "--step", "bound.step", "Euler step (<= 0: stability guard)");
  bind(bound, "--record-every", "bound.record_every", "time between recorded points");
  bind(bound, "--tolerance", "bound.tolerance", "violation tolerance relative to loss(0)");
  bind(bound, "--replay", "bound.replay", "check a saved trajectory.csv instead of running the flow");
  bind(bound, "--seed", "seed", "run seed");
  bound->add_option("--out", out_dir, "output directory");

  CLI::App* rep = app.add_subcommand("report", "validate and summarize a saved run");
  bind(rep, "--from", "report.from", "run directory or report.json");
  rep->add_option("--out", out_dir, "write regenerated CSVs here");

  std::vector<std::string> argv_storage{"knaskit"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Settings s = default_settings();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config file " + config_path);
      s = parse_config_text(std::string((std::istreambuf_iterator<char>(in)), {}));
    }
    for (const Binding& b : bindings) {
      if (b.option->count() == 0) continue;
      set_key(s, b.key, b.flag ? "true" : b.value);
      if (b.key == "data.cifar_dir") set_key(s, "data.source", "cifar10");
    }
    for (const auto& o : overrides) apply_assignment(s, o, "--set");

    const int workers = resolve_threads(threads);
    Output output{out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir), out};
    if (gen->parsed()) return cmd_gen_data(s, output);
    if (score->parsed()) return cmd_score(s, output, workers);
    if (search->parsed()) return cmd_search(s, output, workers);
    if (corr->parsed()) return cmd_correlate(s, output, workers);
    if (bound->parsed()) return cmd_verify_bound(s, output);
    return cmd_report(s, output);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace knas::cli
