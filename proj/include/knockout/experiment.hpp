#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "knockout/config.hpp"
#include "knockout/eval.hpp"
#include "knockout/methods.hpp"
#include "knockout/worlds.hpp"

namespace knockout {

inline constexpr const char* kOutputRootEnv = "KNOCKOUT_OUTPUT_ROOT";

struct RunOptions {
  std::filesystem::path out;  // empty: resolved from config, environment, or ./runs
  std::size_t jobs = 1;
  std::optional<std::size_t> k_max;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::ostream* log = nullptr;
};

/// Output directory precedence: explicit flag, config `output`, then
/// $KNOCKOUT_OUTPUT_ROOT/<config stem>, then runs/<config stem>.
inline std::filesystem::path resolve_output_dir(const RunOptions& opts, const ExperimentConfig& cfg,
                                                const std::filesystem::path& config_path) {
  if (!opts.out.empty()) return opts.out;
  if (!cfg.output.empty()) return cfg.output;
  const auto stem = config_path.stem().string();
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / stem;
  return std::filesystem::path("runs") / stem;
}

/// One repetition of one regime: the drawn world, its train/test split, and
/// the training view after the regime's missingness was applied.
struct Repetition {
  std::uint64_t seed = 0;
  std::unique_ptr<GaussianWorld> gaussian;
  std::unique_ptr<MixedClassWorld> classes;
  TrainingData data;
  Dataset test;
  MaskMatrix test_missing;
  std::optional<ObservedMode> test_mode;
  Dataset full;  // all rows, complete; used for empirical marginals
  std::vector<bool> discrete;
};

namespace detail {

inline FeatureSchema world_schema(const ExperimentConfig& cfg, std::size_t csv_dim) {
  const auto enc = cfg.placeholders.categorical_encoding == "zero_onehot" ? CategoricalEncoding::zero_onehot
                                                                          : CategoricalEncoding::extra_class;
  const auto& w = cfg.world;
  if (w.kind == "gaussian") return FeatureSchema::all_unbounded(w.dim - 1);
  if (w.kind == "continuous2d") return FeatureSchema::all_unbounded(2);
  if (w.kind == "mixed") return FeatureSchema({{"x1", Categorical{2}}, {"x2", ContinuousUnbounded{}}}, enc);
  if (w.features.empty()) return FeatureSchema::all_unbounded(csv_dim);
  if (w.features.size() != csv_dim) throw ConfigError("config: world.features lists " + std::to_string(w.features.size()) +
                                                      " features but the csv has " + std::to_string(csv_dim));
  return FeatureSchema(w.features, enc);
}

inline std::uint64_t regime_tag(const RegimeSpec& r) { return fnv1a(r.name); }

inline Dataset cap_rows(const Dataset& d, std::size_t cap) {
  if (cap == 0 || static_cast<std::size_t>(d.rows()) <= cap) return d;
  const auto n = static_cast<Eigen::Index>(cap);
  return {d.x.topRows(n), d.y.head(n)};
}

}  // namespace detail

/// Deterministic in (root_seed, seed, regime name); methods are not involved,
/// so adding a method never changes another method's data.
inline Repetition make_repetition(const ExperimentConfig& cfg, const RegimeSpec& regime, std::uint64_t seed) {
  const auto root = cfg.sweep.root_seed;
  Repetition rep;
  rep.seed = seed;
  const auto& w = cfg.world;
  Rng world_rng(derive_seed(root, {seed, 0}));
  Rng data_rng(derive_seed(root, {seed, 1}));
  Dataset train, test;
  MaskMatrix train_missing, test_missing;
  std::optional<ObservedMode> csv_mode;

  if (w.kind == "gaussian") {
    rep.gaussian = std::make_unique<GaussianWorld>(sample_gaussian_world(world_rng, static_cast<Eigen::Index>(w.dim)));
    rep.full = draw_dataset(*rep.gaussian, static_cast<Eigen::Index>(w.n), data_rng);
  } else if (w.kind == "continuous2d" || w.kind == "mixed") {
    rep.classes = std::make_unique<MixedClassWorld>(w.kind == "mixed" ? MixedClassWorld::mixed()
                                                                      : MixedClassWorld::continuous2d());
    rep.full = generate_mixed_classification(*rep.classes, static_cast<Eigen::Index>(w.n), data_rng);
  }
  if (w.kind != "csv") {
    std::tie(train, test) = split_dataset(rep.full, w.train_fraction);
    train_missing = MaskMatrix::Zero(train.rows(), train.dim());
    test_missing = MaskMatrix::Zero(test.rows(), test.dim());
  } else {
    std::ifstream in(w.path);
    if (!in) throw Error("cannot open data file '" + w.path + "'");
    auto table = read_dataset_csv(in);
    Rng split_rng(derive_seed(root, {seed, 1}));
    auto [tr, te] = shuffled_split(table, w.train_fraction, split_rng);
    train = std::move(tr.data);
    train_missing = std::move(tr.missing);
    test = std::move(te.data);
    test_missing = std::move(te.missing);
    rep.full = table.data;
    csv_mode = w.observed_mode == "mnar" ? ObservedMode::mnar : ObservedMode::mcar;
    if (train.rows() == 0 || test.rows() == 0) throw Error("data file '" + w.path + "' is too small to split");
  }

  rep.data.task = w.task == "classification" ? Task::classification : Task::regression;
  rep.data.schema = detail::world_schema(cfg, static_cast<std::size_t>(train.dim()));
  for (std::size_t j = 0; j < rep.data.schema.dim(); ++j)
    rep.discrete.push_back(is_categorical(rep.data.schema.feature(j).kind));

  if (regime.mechanism == "none") {
    rep.data.train = {train, train_missing};
    if (detail::any_set(train_missing)) rep.data.observed_mode = csv_mode;
  } else {
    if (detail::any_set(train_missing))
      throw ConfigError("config: regime '" + regime.name + "' injects missingness into data that already has some");
    if (regime.mechanism == "mcar") {
      Rng mask_rng(derive_seed(root, {seed, 2, detail::regime_tag(regime)}));
      rep.data.train = inject_mcar(train, regime.p, mask_rng);
      rep.data.observed_mode = ObservedMode::mcar;
    } else {
      std::vector<bool> cont;
      for (bool d : rep.discrete) cont.push_back(!d);
      auto flags = std::make_unique<bool[]>(cont.size());
      std::copy(cont.begin(), cont.end(), flags.get());
      rep.data.train = inject_mnar_self_censor(train, regime.q, std::span<const bool>(flags.get(), cont.size()));
      rep.data.observed_mode = ObservedMode::mnar;
    }
  }
  rep.data.n_classes = 2;
  rep.test = detail::cap_rows(test, w.n_test);
  rep.test_missing = test_missing.topRows(rep.test.rows());
  if (detail::any_set(rep.test_missing)) rep.test_mode = csv_mode;
  return rep;
}

inline TrainConfig train_config(const ExperimentConfig& cfg, const RegimeSpec& regime, std::uint64_t seed) {
  TrainConfig t;
  t.adam.learning_rate = cfg.train.learning_rate;
  t.steps = cfg.train.steps;
  t.batch_size = cfg.train.batch_size;
  t.trace_every = cfg.train.trace_every;
  // Shared by every method of the repetition so comparisons are paired.
  t.seed = derive_seed(cfg.sweep.root_seed, {seed, 3, detail::regime_tag(regime)});
  return t;
}

inline NetworkOptions network_options(const ExperimentConfig& cfg) {
  NetworkOptions o;
  o.hidden = cfg.train.hidden;
  o.zscore_magnitude = cfg.placeholders.zscore_magnitude;
  return o;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception
/// is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      {
        std::lock_guard lock(m);
        if (failure) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < std::max<std::size_t>(1, std::min(jobs, n)); ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Trains every (repetition, method) pair. Result [r][m].
inline std::vector<std::vector<TrainedMethod>> train_all(const ExperimentConfig& cfg, const RegimeSpec& regime,
                                                         const std::vector<Repetition>& reps,
                                                         const std::vector<MethodSpec>& methods, std::size_t jobs,
                                                         std::ostream* log) {
  std::vector<std::vector<TrainedMethod>> out(reps.size(), std::vector<TrainedMethod>(methods.size()));
  std::mutex log_mutex;
  std::ostringstream sink;
  parallel_for(reps.size() * methods.size(), jobs, [&](std::size_t t) {
    const auto r = t / methods.size(), m = t % methods.size();
    std::ostringstream warn;
    try {
      out[r][m] = train_method(methods[m], reps[r].data, train_config(cfg, regime, reps[r].seed), network_options(cfg),
                               &warn);
    } catch (const Error& e) {
      throw Error("regime '" + regime.name + "' method '" + methods[m].name + "' seed " + std::to_string(reps[r].seed) +
                  ": " + e.what());
    }
    if (log) {
      std::lock_guard lock(log_mutex);
      *log << warn.str() << "[" << regime.name << "] trained " << methods[m].name << " seed " << reps[r].seed << "\n";
    }
  });
  return out;
}

inline std::vector<SweepInput> sweep_inputs(const ExperimentConfig& cfg, const std::vector<Repetition>& reps,
                                            const std::vector<MethodSpec>& methods,
                                            const std::vector<std::vector<TrainedMethod>>& models) {
  std::vector<SweepInput> inputs;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const auto& rep = reps[r];
    SweepInput in;
    in.seed = rep.seed;
    for (std::size_t m = 0; m < methods.size(); ++m) in.methods.emplace_back(methods[m].name, &models[r][m]);
    in.test_x = rep.test.x;
    in.test_y = rep.test.y;
    if (rep.test_mode) {
      in.test_observed = &rep.test_missing;
      in.test_observed_mode = rep.test_mode;
    }
    in.world = rep.gaussian.get();
    if (rep.data.task == Task::classification && cfg.world.kind != "csv") in.marginal_data = &rep.full;
    in.discrete_features = rep.discrete;
    in.bins = cfg.world.bins;
    inputs.push_back(std::move(in));
  }
  return inputs;
}

/// Collects file hashes for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root) : root_(std::move(root)) {}

  void write(const std::filesystem::path& rel, const std::string& content) {
    const auto path = root_ / rel;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw Error("write failed for '" + path.string() + "'");
    hashes_[rel.generic_string()] = fnv1a(content);
  }

  const std::filesystem::path& root() const { return root_; }
  const std::map<std::string, std::uint64_t>& hashes() const { return hashes_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, std::uint64_t> hashes_;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string report_csv(const SweepReport& r) {
  std::ostringstream os;
  write_report_csv(r, os);
  return os.str();
}

inline std::string plotdata_csv(const SweepReport& r) {
  std::ostringstream os;
  write_plotdata_csv(r, os);
  return os.str();
}

inline std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream os;
  os << "step,loss\n";
  for (const auto& p : trace) os << p.step << ',' << format_double(p.loss) << '\n';
  return os.str();
}

inline std::string model_file(const std::string& method, std::uint64_t seed) {
  return "models/" + method + "_seed" + std::to_string(seed) + ".json";
}

inline void write_manifest(ArtifactWriter& w, const ExperimentConfig& cfg, const std::string& command) {
  nlohmann::json j;
  j["format"] = "knockout-manifest/1";
  j["command"] = command;
  j["config_hash"] = hex64(fnv1a(serialize_config(cfg)));
  j["seeds"] = cfg.sweep.seeds;
  j["root_seed"] = cfg.sweep.root_seed;
  j["k_max"] = cfg.sweep.k_max;
  j["versions"] = {{"knockout", "1.0.0"},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [path, h] : w.hashes()) files[path] = hex64(h);
  j["files"] = files;
  w.write("manifest.json", j.dump(2) + "\n");
}

/// Trains and evaluates every regime. Returns the per-regime reports.
inline std::map<std::string, SweepReport> cmd_run(ExperimentConfig cfg, const std::filesystem::path& config_path,
                                                  const RunOptions& opts = {}) {
  if (opts.k_max) cfg.sweep.k_max = *opts.k_max;
  if (opts.seeds) cfg.sweep.seeds = *opts.seeds;
  ArtifactWriter w(resolve_output_dir(opts, cfg, config_path));
  w.write("config.yaml", serialize_config(cfg));
  std::map<std::string, SweepReport> reports;
  for (const auto& regime : cfg.regimes) {
    std::vector<Repetition> reps;
    for (auto s : cfg.sweep.seeds) reps.push_back(make_repetition(cfg, regime, s));
    const auto patterns = enumerate_patterns(reps.front().data.schema.dim(), cfg.sweep.k_max);
    auto models = train_all(cfg, regime, reps, cfg.methods, opts.jobs, opts.log);
    auto report = run_pattern_sweep(sweep_inputs(cfg, reps, cfg.methods, models), patterns, opts.jobs);
    const std::filesystem::path dir = regime.name;
    for (std::size_t r = 0; r < reps.size(); ++r) {
      const auto& rep = reps[r];
      const auto tag = "seed" + std::to_string(rep.seed);
      if (rep.gaussian) w.write(dir / "worlds" / (tag + ".json"), world_to_json(*rep.gaussian).dump(2) + "\n");
      std::ostringstream data, mask;
      write_dataset_csv(data, rep.data.train);
      write_mask_csv(mask, rep.data.train.missing);
      w.write(dir / "data" / (tag + "_train.csv"), data.str());
      w.write(dir / "data" / (tag + "_train_mask.csv"), mask.str());
      for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        const auto& name = cfg.methods[m].name;
        w.write(dir / model_file(name, rep.seed), trained_method_to_json(models[r][m]).dump() + "\n");
        w.write(dir / "traces" / (name + "_" + tag + ".csv"), trace_csv(models[r][m].trace));
      }
    }
    w.write(dir / "report.csv", report_csv(report));
    w.write(dir / "plotdata.csv", plotdata_csv(report));
    w.write(dir / "aggregates.json", aggregates_to_json(report).dump(2) + "\n");
    if (opts.log) *opts.log << "[" << regime.name << "] wrote " << report.results.size() << " results\n";
    reports.emplace(regime.name, std::move(report));
  }
  write_manifest(w, cfg, "run");
  return reports;
}

/// Re-evaluates models saved by a previous run (optionally with a different
/// k_max) without retraining. Test data is regenerated from the seeds.
inline std::map<std::string, SweepReport> cmd_sweep(ExperimentConfig cfg, const std::filesystem::path& config_path,
                                                    const RunOptions& opts = {}) {
  if (opts.k_max) cfg.sweep.k_max = *opts.k_max;
  if (opts.seeds) cfg.sweep.seeds = *opts.seeds;
  ArtifactWriter w(resolve_output_dir(opts, cfg, config_path));
  std::map<std::string, SweepReport> reports;
  for (const auto& regime : cfg.regimes) {
    const std::filesystem::path dir = w.root() / regime.name;
    std::vector<Repetition> reps;
    for (auto s : cfg.sweep.seeds) reps.push_back(make_repetition(cfg, regime, s));
    std::vector<std::vector<TrainedMethod>> models(reps.size());
    for (std::size_t r = 0; r < reps.size(); ++r)
      for (const auto& m : cfg.methods) {
        const auto path = dir / model_file(m.name, reps[r].seed);
        std::ifstream in(path);
        if (!in) throw Error("missing model for method '" + m.name + "' seed " + std::to_string(reps[r].seed) + " (" +
                             path.string() + ")");
        try {
          models[r].push_back(trained_method_from_json(nlohmann::json::parse(in)));
        } catch (const nlohmann::json::exception& e) {
          throw Error("corrupt model file '" + path.string() + "': " + e.what());
        }
      }
    const auto patterns = enumerate_patterns(reps.front().data.schema.dim(), cfg.sweep.k_max);
    auto report = run_pattern_sweep(sweep_inputs(cfg, reps, cfg.methods, models), patterns, opts.jobs);
    const std::filesystem::path rel = std::filesystem::path(regime.name) / "sweep";
    w.write(rel / "report.csv", report_csv(report));
    w.write(rel / "plotdata.csv", plotdata_csv(report));
    w.write(rel / "aggregates.json", aggregates_to_json(report).dump(2) + "\n");
    reports.emplace(regime.name, std::move(report));
  }
  return reports;
}

inline std::string placeholder_method_name(double v) { return "placeholder_" + format_double(v); }

/// Trains one Knockout model per placeholder value and regime, evaluated on
/// every pattern. Writes ablation/<regime>/report.csv and a per-value summary.
inline std::map<std::string, SweepReport> cmd_ablate_placeholder(ExperimentConfig cfg,
                                                                 const std::filesystem::path& config_path,
                                                                 const RunOptions& opts = {},
                                                                 std::optional<std::vector<double>> values = {}) {
  if (opts.k_max) cfg.sweep.k_max = *opts.k_max;
  if (opts.seeds) cfg.sweep.seeds = *opts.seeds;
  if (values) cfg.ablation.values = *values;
  if (cfg.ablation.values.empty()) throw ConfigError("config: field 'ablation.values': needs at least one value");
  if (cfg.world.kind != "gaussian" && cfg.world.kind != "csv")
    throw ConfigError("config: placeholder ablation needs a regression world");
  MethodSpec base;
  base.name = "knockout";
  base.kind = MethodKind::knockout;
  bool found = false;
  for (const auto& m : cfg.methods)
    if (m.name == cfg.ablation.method) {
      if (m.kind != MethodKind::knockout)
        throw ConfigError("config: field 'ablation.method': method '" + m.name + "' is not a knockout method");
      base = m;
      found = true;
    }
  if (!found && cfg.ablation.method != "knockout")
    throw ConfigError("config: field 'ablation.method': no method named '" + cfg.ablation.method + "'");
  std::vector<MethodSpec> methods;
  std::set<double> seen;
  for (double v : cfg.ablation.values) {
    if (!seen.insert(v).second) throw ConfigError("config: field 'ablation.values': duplicate value " + format_double(v));
    auto m = base;
    m.name = placeholder_method_name(v);
    m.placeholder = v;
    methods.push_back(m);
  }

  ArtifactWriter w(resolve_output_dir(opts, cfg, config_path) / "ablation");
  std::map<std::string, SweepReport> reports;
  std::ostringstream summary;
  summary << "regime,placeholder,metric,mean,std,seeds\n";
  for (const auto& regime : cfg.regimes) {
    std::vector<Repetition> reps;
    for (auto s : cfg.sweep.seeds) reps.push_back(make_repetition(cfg, regime, s));
    const auto patterns = enumerate_patterns(reps.front().data.schema.dim(), cfg.sweep.k_max);
    auto models = train_all(cfg, regime, reps, methods, opts.jobs, opts.log);
    auto report = run_pattern_sweep(sweep_inputs(cfg, reps, methods, models), patterns, opts.jobs);
    const auto agg = report.aggregate();
    for (double v : cfg.ablation.values)
      for (const auto& row : agg)
        if (row.method == placeholder_method_name(v) && row.popcount == -1)
          summary << regime.name << ',' << format_double(v) << ',' << row.metric << ',' << format_double(row.mean) << ','
                  << format_double(row.std) << ',' << row.seeds << '\n';
    w.write(std::filesystem::path(regime.name) / "report.csv", report_csv(report));
    w.write(std::filesystem::path(regime.name) / "plotdata.csv", plotdata_csv(report));
    reports.emplace(regime.name, std::move(report));
  }
  w.write("summary.csv", summary.str());
  write_manifest(w, cfg, "ablate-placeholder");
  return reports;
}

}  // namespace knockout
