#include <CLI11.hpp>

#include <charconv>
#include <iostream>

#include "knockout/experiment.hpp"
#include "knockout/verify.hpp"

using namespace knockout;

namespace {

// "3" means seeds 0..2; "4,9" lists them.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    std::uint64_t v = 0;
    const auto* first = text.data() + start;
    const auto* last = text.data() + end;
    auto res = std::from_chars(first, last, v);
    if (first == last || res.ec != std::errc() || res.ptr != last) throw ConfigError("--seeds: cannot parse '" + text + "'");
    out.push_back(v);
    start = end + 1;
  }
  if (out.size() == 1 && text.find(',') == std::string::npos) {
    const auto n = out.front();
    if (n == 0) throw ConfigError("--seeds: count must be at least 1");
    out.clear();
    for (std::uint64_t k = 0; k < n; ++k) out.push_back(k);
  }
  return out;
}

void print_summary(const std::map<std::string, SweepReport>& reports) {
  for (const auto& [regime, report] : reports)
    for (const auto& row : report.aggregate()) {
      std::cout << regime << '\t' << row.method << '\t' << row.metric << '\t'
                << (row.popcount < 0 ? std::string("all") : std::to_string(row.popcount)) << '\t'
                << format_double(row.mean) << '\t' << format_double(row.std) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate models that handle missing inputs by feature knockout"};
  app.require_subcommand(1);

  std::string config_path, out, seeds;
  std::size_t jobs = 1, k_max = 0;
  std::vector<double> values;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment YAML file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, std::string("Output directory (default: config output, $") + kOutputRootEnv +
                                      "/<name>, or runs/<name>)");
    sub->add_option("--seeds", seeds, "Seed count N or comma-separated list");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--k-max", k_max, "Largest number of missing features swept");
    sub->add_flag("--quiet", quiet, "No progress output");
  };

  auto* run = app.add_subcommand("run", "Train every method on every regime and sweep missingness patterns");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "Re-evaluate models saved by a previous run");
  add_common(sweep);
  auto* ablate = app.add_subcommand("ablate-placeholder", "Train Knockout once per placeholder value");
  add_common(ablate);
  ablate->add_option("--values", values, "Placeholder values (default from config)")->delimiter(',');
  app.add_subcommand("verify", "Run the exact identity checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("verify")) return cmd_verify(std::cout);

    auto cfg = load_config(config_path);
    RunOptions opts;
    opts.out = out;
    opts.jobs = jobs;
    if (k_max > 0) opts.k_max = k_max;
    if (!seeds.empty()) opts.seeds = parse_seeds(seeds);
    opts.log = quiet ? nullptr : &std::cerr;

    std::map<std::string, SweepReport> reports;
    if (app.got_subcommand("run")) reports = cmd_run(cfg, config_path, opts);
    else if (app.got_subcommand("sweep")) reports = cmd_sweep(cfg, config_path, opts);
    else {
      std::optional<std::vector<double>> v;
      if (!values.empty()) v = values;
      reports = cmd_ablate_placeholder(cfg, config_path, opts, v);
    }
    print_summary(reports);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
