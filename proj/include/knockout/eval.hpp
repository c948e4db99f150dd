#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "knockout/dataset.hpp"
#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/methods.hpp"
#include "knockout/worlds.hpp"

namespace knockout {

inline double mse(const Eigen::Ref<const Eigen::VectorXd>& predictions, const Eigen::Ref<const Eigen::VectorXd>& targets) {
  if (predictions.size() != targets.size()) throw Error("mse: length mismatch");
  if (predictions.size() == 0) throw Error("mse: empty input");
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

/// Jensen-Shannon divergence in nats, 0 log 0 = 0.
inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty()) throw Error("jsd: distributions differ in support size");
  double sp = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0 || q[k] < 0.0) throw Error("jsd: negative probability");
    sp += p[k];
    sq += q[k];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) throw Error("jsd: distributions are not normalized");
  auto term = [](double a, double m) { return a > 0.0 ? a * std::log(a / m) : 0.0; };
  double acc_p = 0.0, acc_q = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double m = 0.5 * (p[k] + q[k]);
    acc_p += term(p[k], m);
    acc_q += term(q[k], m);
  }
  // Summing the two halves in a fixed order keeps jsd(p, q) == jsd(q, p).
  const double v = acc_p <= acc_q ? 0.5 * acc_p + 0.5 * acc_q : 0.5 * acc_q + 0.5 * acc_p;
  return std::clamp(v, 0.0, std::log(2.0));
}

/// Fraction of rows whose argmax class differs from the label.
inline double error_rate(const Eigen::MatrixXd& probabilities, const Eigen::Ref<const Eigen::VectorXd>& labels) {
  if (probabilities.rows() != labels.size() || labels.size() == 0) throw Error("error_rate: shape mismatch");
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    wrong += static_cast<double>(argmax_row(probabilities.row(i))) != labels(i);
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

/// Indices of the features left unmasked by a pattern.
inline std::vector<Eigen::Index> observed_indices(const Mask& pattern) {
  std::vector<Eigen::Index> s;
  for (std::size_t i = 0; i < pattern.size(); ++i)
    if (!pattern[i]) s.push_back(static_cast<Eigen::Index>(i));
  return s;
}

inline double mse_vs_bayes(const Eigen::Ref<const Eigen::VectorXd>& predictions, const GaussianWorld& world,
                           const Eigen::MatrixXd& test_x, const Mask& pattern) {
  return mse(predictions, GaussianConditional(world, observed_indices(pattern)).predict_rows(test_x));
}

/// The model sees the pattern applied to every test row as induced
/// missingness; the oracle conditions on the same unmasked coordinates.
inline double mse_vs_bayes(const TrainedMethod& model, const GaussianWorld& world, const Eigen::MatrixXd& test_x,
                           const Mask& pattern) {
  auto pred = predict_method(model, test_x, broadcast_mask(pattern, test_x.rows()));
  return mse_vs_bayes(pred.col(0), world, test_x, pattern);
}

/// P(Y = 1 | X_feature = value, every other feature missing).
using MarginalModel = std::function<double(Eigen::Index feature, double value)>;

/// Bin-mass weighted JSD between the model's single-feature conditional and
/// the smoothed empirical estimate, evaluated at bin centers (or discrete
/// values).
inline double marginal_fidelity(const MarginalModel& model, const Dataset& data, Eigen::Index feature, std::size_t bins,
                                bool discrete = false) {
  const auto est = empirical_conditional(data, feature, bins, true, discrete);
  double total = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < est.cells(); ++k) {
    if (est.counts[k] == 0) continue;
    const double p = model(feature, est.values[k]);
    const double e = est.estimate[k];
    const double w = static_cast<double>(est.counts[k]);
    acc += w * jsd({1.0 - p, p}, {1.0 - e, e});
    total += w;
  }
  if (total == 0.0) throw Error("marginal_fidelity: no occupied bins");
  return acc / total;
}

inline MarginalModel marginal_model(const TrainedMethod& tm) {
  return [&tm](Eigen::Index feature, double value) {
    const auto d = static_cast<Eigen::Index>(tm.schema.dim());
    // Placeholder methods ignore the raw value under the mask; a valid value
    // keeps normalization of categorical codes well defined.
    Eigen::MatrixXd x(1, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto& st = tm.stats.features[static_cast<std::size_t>(j)];
      x(0, j) = st.mode == NormMode::zscore ? st.mean : st.invert(0.0);
      if (is_categorical(tm.schema.feature(static_cast<std::size_t>(j)).kind)) x(0, j) = 1.0;
    }
    x(0, feature) = value;
    MaskMatrix m = MaskMatrix::Ones(1, d);
    m(0, feature) = 0;
    auto probs = predict_method(tm, x, m);
    if (probs.cols() != 2) throw Error("marginal_fidelity needs a binary classifier");
    return probs(0, 1);
  };
}

inline double marginal_fidelity(const TrainedMethod& tm, const Dataset& data, Eigen::Index feature, std::size_t bins,
                                bool discrete = false) {
  return marginal_fidelity(marginal_model(tm), data, feature, bins, discrete);
}

struct PatternResult {
  std::string method;
  Mask pattern;
  std::string metric;
  std::uint64_t seed = 0;
  double value = 0.0;
  std::size_t n_test = 0;
};

/// Canonical order: method name, pattern (popcount, bits), metric, seed.
inline bool result_less(const PatternResult& a, const PatternResult& b) {
  if (a.method != b.method) return a.method < b.method;
  if (a.pattern != b.pattern) return pattern_less(a.pattern, b.pattern);
  if (a.metric != b.metric) return a.metric < b.metric;
  return a.seed < b.seed;
}

struct AggregateRow {
  std::string method;
  std::string metric;
  int popcount = 0;  // -1 aggregates every pattern
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across seeds
  std::size_t seeds = 0;
};

struct SweepReport {
  std::vector<PatternResult> results;

  void canonicalize() { std::sort(results.begin(), results.end(), result_less); }

  /// Patterns are averaged within each seed first; mean and sample std are
  /// then taken across seeds.
  std::vector<AggregateRow> aggregate() const {
    // (method, metric, popcount) -> seed -> (sum, count)
    std::map<std::tuple<std::string, std::string, int>, std::map<std::uint64_t, std::pair<double, std::size_t>>> acc;
    for (const auto& r : results) {
      const int pc = static_cast<int>(r.pattern.popcount());
      for (int key : {pc, -1}) {
        auto& cell = acc[{r.method, r.metric, key}][r.seed];
        cell.first += r.value;
        ++cell.second;
      }
    }
    std::vector<AggregateRow> out;
    for (const auto& [key, per_seed] : acc) {
      AggregateRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), 0.0, 0.0, per_seed.size()};
      std::vector<double> means;
      for (const auto& [seed, sc] : per_seed) means.push_back(sc.first / static_cast<double>(sc.second));
      double sum = 0.0;
      for (double v : means) sum += v;
      row.mean = sum / static_cast<double>(means.size());
      if (means.size() > 1) {
        double ss = 0.0;
        for (double v : means) ss += (v - row.mean) * (v - row.mean);
        row.std = std::sqrt(ss / static_cast<double>(means.size() - 1));
      }
      out.push_back(row);
    }
    return out;
  }

  /// Cross-seed mean for one (method, metric, popcount); popcount -1 means
  /// every pattern.
  double mean(const std::string& method, const std::string& metric, int popcount) const {
    for (const auto& row : aggregate())
      if (row.method == method && row.metric == metric && row.popcount == popcount) return row.mean;
    throw Error("no results for method '" + method + "', metric '" + metric + "', popcount " + std::to_string(popcount));
  }
};

/// One repetition's trained models and shared test data.
struct SweepInput {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, const TrainedMethod*>> methods;
  Eigen::MatrixXd test_x;
  Eigen::VectorXd test_y;
  const MaskMatrix* test_observed = nullptr;
  std::optional<ObservedMode> test_observed_mode;
  const GaussianWorld* world = nullptr;    // enables mse_bayes
  const Dataset* marginal_data = nullptr;  // enables jsd for single-feature patterns
  std::vector<bool> discrete_features;
  std::size_t bins = 50;
};

namespace detail {

inline std::vector<PatternResult> evaluate_method(const SweepInput& in, const std::string& name, const TrainedMethod& tm,
                                                  const std::vector<Mask>& patterns,
                                                  const std::vector<std::optional<Eigen::VectorXd>>& bayes) {
  std::vector<PatternResult> out;
  const auto n = static_cast<std::size_t>(in.test_x.rows());
  std::map<Eigen::Index, double> jsd_cache;
  for (std::size_t p = 0; p < patterns.size(); ++p) {
    const auto& pattern = patterns[p];
    const auto first = out.size();
    auto pred = predict_method(tm, in.test_x, broadcast_mask(pattern, in.test_x.rows()), in.test_observed,
                               in.test_observed_mode);
    if (tm.task == Task::regression) {
      out.push_back({name, pattern, "mse_obs", in.seed, mse(pred.col(0), in.test_y), n});
      if (bayes[p]) out.push_back({name, pattern, "mse_bayes", in.seed, mse(pred.col(0), *bayes[p]), n});
    } else {
      out.push_back({name, pattern, "error_rate", in.seed, error_rate(pred, in.test_y), n});
      const auto obs = observed_indices(pattern);
      if (in.marginal_data && obs.size() == 1) {
        const auto f = obs.front();
        if (!jsd_cache.count(f)) {
          const bool discrete = static_cast<std::size_t>(f) < in.discrete_features.size() &&
                                in.discrete_features[static_cast<std::size_t>(f)];
          jsd_cache[f] = marginal_fidelity(tm, *in.marginal_data, f, in.bins, discrete);
        }
        out.push_back({name, pattern, "jsd", in.seed, jsd_cache[f], static_cast<std::size_t>(in.marginal_data->rows())});
      }
    }
    for (std::size_t k = first; k < out.size(); ++k)
      if (!std::isfinite(out[k].value))
        throw Error("non-finite " + out[k].metric + " for method '" + name + "' pattern " + pattern.to_string());
  }
  return out;
}

}  // namespace detail

/// Evaluates every (method, pattern, seed). Work is spread over `jobs`
/// threads; the report is canonicalized so it does not depend on scheduling
/// or on the order methods were listed.
inline SweepReport run_pattern_sweep(const std::vector<SweepInput>& inputs, const std::vector<Mask>& patterns,
                                     std::size_t jobs = 1) {
  if (inputs.empty()) throw Error("pattern sweep needs at least one repetition");
  if (patterns.empty()) throw Error("pattern sweep needs at least one pattern");
  std::set<std::string> names;
  for (const auto& [name, tm] : inputs.front().methods) names.insert(name);
  for (const auto& in : inputs) {
    std::set<std::string> here;
    for (const auto& [name, tm] : in.methods) {
      if (!tm) throw Error("missing model for method '" + name + "' seed " + std::to_string(in.seed));
      here.insert(name);
    }
    for (const auto& name : names)
      if (!here.count(name)) throw Error("missing model for method '" + name + "' seed " + std::to_string(in.seed));
    for (const auto& name : here)
      if (!names.count(name)) throw Error("missing model for method '" + name + "' seed " + std::to_string(inputs.front().seed));
    if (in.test_x.rows() == 0) throw Error("pattern sweep needs a non-empty test set");
  }

  // Bayes targets depend only on (seed, pattern), shared by all methods.
  std::vector<std::vector<std::optional<Eigen::VectorXd>>> bayes(inputs.size());
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    bayes[s].resize(patterns.size());
    if (!inputs[s].world) continue;
    for (std::size_t p = 0; p < patterns.size(); ++p)
      bayes[s][p] = GaussianConditional(*inputs[s].world, observed_indices(patterns[p])).predict_rows(inputs[s].test_x);
  }

  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t s = 0; s < inputs.size(); ++s)
    for (std::size_t m = 0; m < inputs[s].methods.size(); ++m) tasks.emplace_back(s, m);
  std::vector<std::vector<PatternResult>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t t; (t = next++) < tasks.size();) {
      try {
        const auto& in = inputs[tasks[t].first];
        const auto& [name, tm] = in.methods[tasks[t].second];
        slots[t] = detail::evaluate_method(in, name, *tm, patterns, bayes[tasks[t].first]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n_threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  SweepReport report;
  for (auto& slot : slots) report.results.insert(report.results.end(), slot.begin(), slot.end());
  report.canonicalize();
  return report;
}

inline void write_report_csv(const SweepReport& report, std::ostream& os) {
  os << "method,pattern,popcount,metric,seed,value\n";
  for (const auto& r : report.results)
    os << r.method << ',' << r.pattern.to_string() << ',' << r.pattern.popcount() << ',' << r.metric << ',' << r.seed
       << ',' << format_double(r.value) << '\n';
}

/// Mean-per-popcount series, one row per (metric, method, popcount).
inline void write_plotdata_csv(const SweepReport& report, std::ostream& os) {
  os << "metric,method,popcount,mean,std,seeds\n";
  auto rows = report.aggregate();
  std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    return std::tie(a.metric, a.method, a.popcount) < std::tie(b.metric, b.method, b.popcount);
  });
  for (const auto& r : rows) {
    if (r.popcount < 0) continue;
    os << r.metric << ',' << r.method << ',' << r.popcount << ',' << format_double(r.mean) << ',' << format_double(r.std)
       << ',' << r.seeds << '\n';
  }
}

inline nlohmann::json aggregates_to_json(const SweepReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : report.aggregate()) {
    const std::string key = r.popcount < 0 ? "all" : std::to_string(r.popcount);
    j[r.method][r.metric][key] = {{"mean", r.mean}, {"std", r.std}, {"seeds", r.seeds}};
  }
  return j;
}

/// Parses the long-format report back, for post-hoc checks.
inline SweepReport read_report_csv(std::istream& is) {
  SweepReport report;
  std::string line;
  if (!std::getline(is, line) || line != "method,pattern,popcount,metric,seed,value")
    throw Error("report csv: unexpected header");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6) throw Error("report csv line " + std::to_string(lineno) + ": expected 6 fields");
    PatternResult r;
    r.method = f[0];
    r.pattern = Mask::from_string(f[1]);
    r.metric = f[3];
    r.seed = std::stoull(f[4]);
    r.value = detail::parse_double(f[5], lineno, 6);
    report.results.push_back(std::move(r));
  }
  return report;
}

}  // namespace knockout
