#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "knockout/experiment.hpp"

using namespace knockout;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "knockout_experiment_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny = R"(
world: {kind: gaussian, n: 400, train_fraction: 0.5}
train: {steps: 30, batch_size: 32, hidden: [8]}
methods:
  - {kind: knockout}
sweep: {k_max: 1, seeds: 1}
)";

RunOptions at(const fs::path& out) {
  RunOptions o;
  o.out = out;
  return o;
}

}  // namespace

TEST(Experiment, MinimalRunHasTenResultsPerMetric) {
  auto dir = scratch("minimal");
  auto reports = cmd_run(parse_config(kTiny), dir / "tiny.yaml", at(dir / "out"));
  const auto& rep = reports.at("complete");
  std::map<std::string, int> per_metric;
  for (const auto& r : rep.results) ++per_metric[r.metric];
  EXPECT_EQ(per_metric["mse_obs"], 10);
  EXPECT_EQ(per_metric["mse_bayes"], 10);
  for (const char* f : {"config.yaml", "manifest.json", "complete/report.csv", "complete/plotdata.csv",
                        "complete/aggregates.json", "complete/models/knockout_seed0.json",
                        "complete/traces/knockout_seed0.csv", "complete/worlds/seed0.json",
                        "complete/data/seed0_train.csv", "complete/data/seed0_train_mask.csv"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["files"]["complete/report.csv"].get<std::string>(),
            hex64(fnv1a(slurp(dir / "out" / "complete/report.csv"))));
}

TEST(Experiment, RerunIsByteIdenticalAcrossJobCounts) {
  auto dir = scratch("determinism");
  auto cfg = parse_config(std::string(kTiny) + "regimes: [{name: c}, {name: m, mechanism: mcar, p: 0.2}]\n");
  cfg.methods.push_back(cfg.methods[0]);
  cfg.methods[1].name = "star";
  cfg.methods[1].kind = MethodKind::knockout_star;
  auto a = at(dir / "a");
  auto b = at(dir / "b");
  b.jobs = 3;
  cmd_run(cfg, dir / "x.yaml", a);
  cmd_run(cfg, dir / "x.yaml", b);
  for (const char* f : {"c/report.csv", "m/report.csv", "manifest.json", "m/models/star_seed0.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Experiment, OutputDirectoryPrecedence) {
  auto cfg = parse_config(kTiny);
  RunOptions o;
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(resolve_output_dir(o, cfg, "cfgs/fig.yaml"), fs::path("runs/fig"));
  ::setenv(kOutputRootEnv, "/data/root", 1);
  EXPECT_EQ(resolve_output_dir(o, cfg, "cfgs/fig.yaml"), fs::path("/data/root/fig"));
  cfg.output = "from_config";
  EXPECT_EQ(resolve_output_dir(o, cfg, "cfgs/fig.yaml"), fs::path("from_config"));
  o.out = "flag";
  EXPECT_EQ(resolve_output_dir(o, cfg, "cfgs/fig.yaml"), fs::path("flag"));
  ::unsetenv(kOutputRootEnv);
}

TEST(Experiment, SweepReusesSavedModels) {
  auto dir = scratch("sweep");
  auto cfg = parse_config(kTiny);
  auto run = cmd_run(cfg, dir / "x.yaml", at(dir / "out")).at("complete");
  auto again = cmd_sweep(cfg, dir / "x.yaml", at(dir / "out")).at("complete");
  EXPECT_EQ(slurp(dir / "out/complete/report.csv"), slurp(dir / "out/complete/sweep/report.csv"));
  RunOptions wider = at(dir / "out");
  wider.k_max = 2;
  EXPECT_EQ(cmd_sweep(cfg, dir / "x.yaml", wider).at("complete").results.size(), 2u * (1 + 9 + 36));
  fs::remove(dir / "out/complete/models/knockout_seed0.json");
  try {
    cmd_sweep(cfg, dir / "x.yaml", at(dir / "out"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("missing model for method 'knockout' seed 0"), std::string::npos);
  }
}

TEST(Experiment, SingleValueAblationMatchesRun) {
  auto dir = scratch("ablation");
  auto cfg = parse_config(kTiny);
  auto run = cmd_run(cfg, dir / "x.yaml", at(dir / "out")).at("complete");
  auto abl = cmd_ablate_placeholder(cfg, dir / "x.yaml", at(dir / "out"), std::vector<double>{10.0}).at("complete");
  ASSERT_EQ(run.results.size(), abl.results.size());
  for (std::size_t k = 0; k < run.results.size(); ++k) {
    EXPECT_EQ(abl.results[k].method, "placeholder_10");
    EXPECT_EQ(abl.results[k].value, run.results[k].value);
  }
  EXPECT_TRUE(fs::exists(dir / "out/ablation/summary.csv"));
  EXPECT_THROW(cmd_ablate_placeholder(cfg, dir / "x.yaml", at(dir / "out"), std::vector<double>{1.0, 1.0}), ConfigError);
}

TEST(Experiment, RegimesLeaveTestDataComplete) {
  auto cfg = parse_config(std::string(kTiny) + "regimes: [{name: m, mechanism: mnar, q: 0.9}]\n");
  auto rep = make_repetition(cfg, cfg.regimes[0], 0);
  EXPECT_TRUE(detail::any_set(rep.data.train.missing));
  EXPECT_EQ(rep.data.observed_mode, ObservedMode::mnar);
  EXPECT_FALSE(detail::any_set(rep.test_missing));
  EXPECT_FALSE(rep.test_mode.has_value());
  // Same world and split regardless of the regime.
  auto plain = make_repetition(parse_config(kTiny), RegimeSpec{}, 0);
  EXPECT_EQ(plain.test.x, rep.test.x);
}

TEST(Experiment, ClassificationWorldReportsJsd) {
  auto dir = scratch("classification");
  auto cfg = parse_config(R"(
world: {kind: mixed, n: 600, train_fraction: 0.5, bins: 10}
train: {steps: 30, batch_size: 32, hidden: [8]}
methods: [{kind: knockout}, {kind: common_baseline}]
sweep: {k_max: 1, seeds: 2}
)");
  auto rep = cmd_run(cfg, dir / "c.yaml", at(dir / "out")).at("complete");
  std::map<std::string, int> per_metric;
  for (const auto& r : rep.results) ++per_metric[r.metric];
  EXPECT_EQ(per_metric["error_rate"], 2 * 2 * 3);
  EXPECT_EQ(per_metric["jsd"], 2 * 2 * 2);
  for (const auto& r : rep.results)
    if (r.metric == "jsd") EXPECT_LE(r.value, std::log(2.0));
}

TEST(Experiment, CsvWorldWithObservedMissingness) {
  auto dir = scratch("csv");
  {
    std::ofstream out(dir / "table.csv");
    out << "a,b,y\n";
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      const double a = standard_normal(rng), b = standard_normal(rng);
      if (i % 7 == 0) out << ',' << format_double(b);
      else out << format_double(a) << ',' << format_double(b);
      out << ',' << format_double(a + 0.5 * b) << '\n';
    }
  }
  std::ofstream(dir / "c.yaml") << R"(
world: {kind: csv, path: table.csv, task: regression, train_fraction: 0.7}
train: {steps: 30, batch_size: 32, hidden: [8]}
methods: [{kind: knockout}, {kind: knn, k: 3}]
sweep: {k_max: 1, seeds: 1}
)";
  auto cfg = load_config(dir / "c.yaml");
  auto rep = cmd_run(cfg, dir / "c.yaml", at(dir / "out")).at("complete");
  for (const auto& r : rep.results) EXPECT_NE(r.metric, "mse_bayes");
  EXPECT_EQ(rep.results.size(), 2u * 3u);
  cfg.regimes = {RegimeSpec{"m", "mcar", 0.1, 0.9}};
  EXPECT_THROW(cmd_run(cfg, dir / "c.yaml", at(dir / "out2")), ConfigError);
}

TEST(Experiment, DivergenceNamesMethodAndSeed) {
  auto dir = scratch("diverge");
  auto cfg = parse_config(kTiny);
  cfg.train.learning_rate = 1e300;
  try {
    cmd_run(cfg, dir / "x.yaml", at(dir / "out"));
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("method 'knockout' seed 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("diverged"), std::string::npos) << msg;
  }
}
