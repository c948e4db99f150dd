#pragma once

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/methods.hpp"
#include "knockout/schema.hpp"
#include "knockout/serialize.hpp"

// Experiment configuration: a YAML document with fixed sections. Unknown
// keys are rejected so typos cannot silently change an experiment.

namespace knockout {

struct WorldSpec {
  std::string kind = "gaussian";  // gaussian | continuous2d | mixed | csv
  std::size_t n = 30000;
  double train_fraction = 0.1;
  std::size_t n_test = 0;  // cap on evaluated test rows, 0 keeps all
  std::size_t dim = 10;    // gaussian: inputs plus target
  std::size_t bins = 50;   // histogram bins for marginal estimates
  std::string path;        // csv
  std::string task = "regression";
  std::string observed_mode = "mcar";  // how empty csv fields arose
  std::vector<Feature> features;       // csv schema; all unbounded when empty

  bool operator==(const WorldSpec& o) const {
    if (features.size() != o.features.size()) return false;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name != o.features[i].name ||
          kind_to_json(features[i].kind) != kind_to_json(o.features[i].kind))
        return false;
    return kind == o.kind && n == o.n && train_fraction == o.train_fraction && n_test == o.n_test && dim == o.dim &&
           bins == o.bins && path == o.path && task == o.task && observed_mode == o.observed_mode;
  }
};

struct RegimeSpec {
  std::string name = "complete";
  std::string mechanism = "none";  // none | mcar | mnar
  double p = 0.1;
  double q = 0.9;
  bool operator==(const RegimeSpec&) const = default;
};

struct TrainSpec {
  std::size_t steps = 5000;
  std::size_t batch_size = 128;
  double learning_rate = 3e-3;
  std::vector<std::size_t> hidden{100, 100};
  std::size_t trace_every = 100;
  bool operator==(const TrainSpec&) const = default;
};

struct SweepSpec {
  std::size_t k_max = 3;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t root_seed = 0;
  bool operator==(const SweepSpec&) const = default;
};

struct PlaceholderSpec {
  double zscore_magnitude = 10.0;
  std::string categorical_encoding = "extra_class";
  bool operator==(const PlaceholderSpec&) const = default;
};

struct AblationSpec {
  std::string method = "knockout";
  std::vector<double> values{0, 2, 4, 6, 8, 10};
  bool operator==(const AblationSpec&) const = default;
};

struct ExperimentConfig {
  WorldSpec world;
  std::vector<RegimeSpec> regimes{RegimeSpec{}};
  TrainSpec train;
  std::vector<MethodSpec> methods;
  SweepSpec sweep;
  PlaceholderSpec placeholders;
  AblationSpec ablation;
  std::string output;

  bool operator==(const ExperimentConfig&) const = default;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string where(const YAML::Node& n, const std::string& field) {
  const auto m = n.Mark();
  std::string s = "config";
  if (m.line >= 0) s += " line " + std::to_string(m.line + 1);
  if (!field.empty()) s += ", field '" + field + "'";
  return s;
}

inline void check_keys(const YAML::Node& n, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!n.IsMap()) throw ConfigError(where(n, section) + ": expected a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where(kv.first, section.empty() ? key : section + "." + key) + ": unknown key");
  }
}

template <class T>
T get(const YAML::Node& parent, const char* key, const std::string& section, T fallback) {
  const auto n = parent[key];
  if (!n) return fallback;
  const std::string field = section.empty() ? key : section + "." + key;
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where(n, field) + ": invalid value");
  }
}

inline std::optional<double> get_optional(const YAML::Node& parent, const char* key, const std::string& section) {
  if (!parent[key]) return std::nullopt;
  return get<double>(parent, key, section, 0.0);
}

inline void require(bool ok, const YAML::Node& n, const std::string& field, const std::string& msg) {
  if (!ok) throw ConfigError(where(n, field) + ": " + msg);
}

inline bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

inline Feature parse_feature(const YAML::Node& n, std::size_t index) {
  const std::string sec = "world.features[" + std::to_string(index) + "]";
  check_keys(n, sec, {"name", "kind", "n_classes", "lo", "hi", "bound", "side", "dim", "members"});
  Feature f;
  f.name = get<std::string>(n, "name", sec, "x" + std::to_string(index + 1));
  const auto kind = get<std::string>(n, "kind", sec, "unbounded");
  if (kind == "categorical") f.kind = Categorical{get<int>(n, "n_classes", sec, 2)};
  else if (kind == "bounded") f.kind = ContinuousBounded{get<double>(n, "lo", sec, 0.0), get<double>(n, "hi", sec, 1.0)};
  else if (kind == "half_bounded") {
    const auto side = get<std::string>(n, "side", sec, "lower");
    require(side == "lower" || side == "upper", n["side"], sec + ".side", "must be 'lower' or 'upper'");
    f.kind = ContinuousHalfBounded{get<double>(n, "bound", sec, 0.0), side == "lower" ? BoundSide::lower : BoundSide::upper};
  } else if (kind == "unbounded") f.kind = ContinuousUnbounded{};
  else if (kind == "group")
    f.kind = StructuredGroup{get<int>(n, "dim", sec, 1), get<std::vector<std::size_t>>(n, "members", sec, {})};
  else throw ConfigError(where(n["kind"], sec + ".kind") + ": unknown feature kind '" + kind + "'");
  try {
    validate_kind(f.kind);
  } catch (const Error& e) {
    throw ConfigError(where(n, sec) + ": " + e.what());
  }
  return f;
}

inline MethodSpec parse_method(const YAML::Node& n, std::size_t index) {
  const std::string sec = "methods[" + std::to_string(index) + "]";
  check_keys(n, sec, {"name", "kind", "rate", "p_clean", "placeholder", "observed_placeholder", "dual_placeholder",
                      "granularity", "k", "dropout_rescale"});
  MethodSpec m;
  const auto kind = get<std::string>(n, "kind", sec, "");
  require(!kind.empty(), n, sec + ".kind", "missing");
  try {
    m.kind = method_kind_from_string(kind);
  } catch (const Error& e) {
    throw ConfigError(where(n["kind"], sec + ".kind") + ": " + e.what());
  }
  m.name = get<std::string>(n, "name", sec, kind);
  require(safe_name(m.name), n, sec + ".name", "names may contain letters, digits, '_' and '-' only");
  m.rate = get_optional(n, "rate", sec);
  if (m.rate) require(*m.rate >= 0.0 && *m.rate <= 1.0, n["rate"], sec + ".rate", "must lie in [0, 1]");
  m.p_clean = get<double>(n, "p_clean", sec, 0.5);
  require(m.p_clean > 0.0 && m.p_clean < 1.0, n, sec + ".p_clean", "must lie in (0, 1)");
  m.placeholder = get_optional(n, "placeholder", sec);
  m.observed_placeholder = get_optional(n, "observed_placeholder", sec);
  if (m.placeholder && m.observed_placeholder && *m.placeholder == *m.observed_placeholder)
    throw ConfigError(where(n["observed_placeholder"], sec + ".observed_placeholder") +
                      ": placeholder invariant violated: observed-missing placeholder equals knockout placeholder");
  m.dual_placeholder = get<bool>(n, "dual_placeholder", sec, true);
  const auto gran = get<std::string>(n, "granularity", sec, "per_batch");
  require(gran == "per_batch" || gran == "per_sample", n["granularity"], sec + ".granularity",
          "must be 'per_batch' or 'per_sample'");
  m.granularity = granularity_from_string(gran);
  m.k = get<std::size_t>(n, "k", sec, 5);
  require(m.k >= 1, n, sec + ".k", "must be at least 1");
  m.dropout_rescale = get<bool>(n, "dropout_rescale", sec, false);
  return m;
}

}  // namespace detail

/// Parses a YAML document. `base_dir` resolves relative csv paths.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root || root.IsNull()) throw ConfigError("config is empty");
  check_keys(root, "", {"world", "regimes", "train", "methods", "sweep", "placeholders", "ablation", "output"});
  ExperimentConfig cfg;

  if (const auto w = root["world"]) {
    check_keys(w, "world",
               {"kind", "n", "train_fraction", "n_test", "dim", "bins", "path", "task", "observed_mode", "features"});
    auto& ws = cfg.world;
    ws.kind = get<std::string>(w, "kind", "world", ws.kind);
    require(ws.kind == "gaussian" || ws.kind == "continuous2d" || ws.kind == "mixed" || ws.kind == "csv", w["kind"],
            "world.kind", "must be one of gaussian, continuous2d, mixed, csv");
    ws.n = get<std::size_t>(w, "n", "world", ws.kind == "gaussian" ? 30000 : 20000);
    ws.train_fraction = get<double>(w, "train_fraction", "world", ws.kind == "gaussian" ? 0.1 : 0.5);
    require(ws.train_fraction > 0.0 && ws.train_fraction < 1.0, w, "world.train_fraction", "must lie in (0, 1)");
    ws.n_test = get<std::size_t>(w, "n_test", "world", 0);
    ws.dim = get<std::size_t>(w, "dim", "world", 10);
    require(ws.dim >= 2, w, "world.dim", "must be at least 2");
    ws.bins = get<std::size_t>(w, "bins", "world", 50);
    require(ws.bins >= 1, w, "world.bins", "must be at least 1");
    ws.path = get<std::string>(w, "path", "world", "");
    ws.task = get<std::string>(w, "task", "world", ws.kind == "gaussian" ? "regression" : "classification");
    require(ws.task == "regression" || ws.task == "classification", w["task"], "world.task",
            "must be 'regression' or 'classification'");
    ws.observed_mode = get<std::string>(w, "observed_mode", "world", "mcar");
    require(ws.observed_mode == "mcar" || ws.observed_mode == "mnar", w["observed_mode"], "world.observed_mode",
            "must be 'mcar' or 'mnar'");
    if (ws.kind == "csv") {
      require(!ws.path.empty(), w, "world.path", "csv worlds need a path");
      std::filesystem::path p(ws.path);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      require(std::filesystem::exists(p), w["path"], "world.path", "file '" + p.string() + "' does not exist");
      ws.path = p.string();
    } else {
      require(ws.path.empty(), w["path"], "world.path", "only csv worlds take a path");
      require(ws.kind == "gaussian" ? ws.task == "regression" : ws.task == "classification", w["task"], "world.task",
              "does not match the world kind");
    }
    if (const auto fs = w["features"]) {
      require(fs.IsSequence(), fs, "world.features", "expected a list");
      require(ws.kind == "csv", fs, "world.features", "only csv worlds declare features");
      for (std::size_t i = 0; i < fs.size(); ++i) ws.features.push_back(parse_feature(fs[i], i));
      try {
        FeatureSchema check(ws.features);
      } catch (const Error& e) {
        throw ConfigError(where(fs, "world.features") + ": " + e.what());
      }
    }
  }

  if (const auto r = root["regimes"]) {
    require(r.IsSequence() && r.size() > 0, r, "regimes", "expected a non-empty list");
    cfg.regimes.clear();
    std::set<std::string> names;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::string sec = "regimes[" + std::to_string(i) + "]";
      check_keys(r[i], sec, {"name", "mechanism", "p", "q"});
      RegimeSpec rs;
      rs.mechanism = get<std::string>(r[i], "mechanism", sec, "none");
      require(rs.mechanism == "none" || rs.mechanism == "mcar" || rs.mechanism == "mnar", r[i]["mechanism"],
              sec + ".mechanism", "must be none, mcar or mnar");
      rs.name = get<std::string>(r[i], "name", sec, rs.mechanism == "none" ? "complete" : rs.mechanism);
      require(safe_name(rs.name), r[i], sec + ".name", "names may contain letters, digits, '_' and '-' only");
      require(names.insert(rs.name).second, r[i], sec + ".name", "duplicate regime name '" + rs.name + "'");
      rs.p = get<double>(r[i], "p", sec, 0.1);
      require(rs.p >= 0.0 && rs.p <= 1.0, r[i], sec + ".p", "must lie in [0, 1]");
      rs.q = get<double>(r[i], "q", sec, 0.9);
      require(rs.q > 0.0 && rs.q < 1.0, r[i], sec + ".q", "must lie in (0, 1)");
      cfg.regimes.push_back(rs);
    }
  }

  if (const auto t = root["train"]) {
    check_keys(t, "train", {"steps", "batch_size", "learning_rate", "hidden", "trace_every"});
    cfg.train.steps = get<std::size_t>(t, "steps", "train", cfg.train.steps);
    require(cfg.train.steps >= 1, t, "train.steps", "must be at least 1");
    cfg.train.batch_size = get<std::size_t>(t, "batch_size", "train", cfg.train.batch_size);
    require(cfg.train.batch_size >= 1, t, "train.batch_size", "must be at least 1");
    cfg.train.learning_rate = get<double>(t, "learning_rate", "train", cfg.train.learning_rate);
    require(cfg.train.learning_rate > 0.0, t, "train.learning_rate", "must be positive");
    cfg.train.hidden = get<std::vector<std::size_t>>(t, "hidden", "train", cfg.train.hidden);
    require(!cfg.train.hidden.empty(), t, "train.hidden", "needs at least one hidden layer");
    for (auto h : cfg.train.hidden) require(h >= 1, t, "train.hidden", "widths must be positive");
    cfg.train.trace_every = get<std::size_t>(t, "trace_every", "train", cfg.train.trace_every);
    require(cfg.train.trace_every >= 1, t, "train.trace_every", "must be at least 1");
  }

  const auto m = root["methods"];
  if (!m) throw ConfigError("config: field 'methods': missing");
  require(m.IsSequence() && m.size() > 0, m, "methods", "expected a non-empty list");
  std::set<std::string> method_names;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto spec = parse_method(m[i], i);
    require(method_names.insert(spec.name).second, m[i], "methods[" + std::to_string(i) + "].name",
            "duplicate method name '" + spec.name + "'");
    cfg.methods.push_back(std::move(spec));
  }

  if (const auto s = root["sweep"]) {
    check_keys(s, "sweep", {"k_max", "seeds", "root_seed"});
    cfg.sweep.k_max = get<std::size_t>(s, "k_max", "sweep", cfg.sweep.k_max);
    if (const auto seeds = s["seeds"]) {
      if (seeds.IsScalar()) {
        const auto count = get<std::size_t>(s, "seeds", "sweep", 0);
        require(count >= 1, seeds, "sweep.seeds", "must be at least 1");
        cfg.sweep.seeds.clear();
        for (std::uint64_t k = 0; k < count; ++k) cfg.sweep.seeds.push_back(k);
      } else {
        cfg.sweep.seeds = get<std::vector<std::uint64_t>>(s, "seeds", "sweep", {});
        require(!cfg.sweep.seeds.empty(), seeds, "sweep.seeds", "needs at least one seed");
        std::set<std::uint64_t> uniq(cfg.sweep.seeds.begin(), cfg.sweep.seeds.end());
        require(uniq.size() == cfg.sweep.seeds.size(), seeds, "sweep.seeds", "seeds must be distinct");
      }
    }
    cfg.sweep.root_seed = get<std::uint64_t>(s, "root_seed", "sweep", 0);
  }

  if (const auto p = root["placeholders"]) {
    check_keys(p, "placeholders", {"zscore_magnitude", "categorical_encoding"});
    cfg.placeholders.zscore_magnitude = get<double>(p, "zscore_magnitude", "placeholders", 10.0);
    require(cfg.placeholders.zscore_magnitude > 0.0, p, "placeholders.zscore_magnitude", "must be positive");
    cfg.placeholders.categorical_encoding = get<std::string>(p, "categorical_encoding", "placeholders", "extra_class");
    require(cfg.placeholders.categorical_encoding == "extra_class" || cfg.placeholders.categorical_encoding == "zero_onehot",
            p["categorical_encoding"], "placeholders.categorical_encoding", "must be 'extra_class' or 'zero_onehot'");
  }

  if (const auto a = root["ablation"]) {
    check_keys(a, "ablation", {"method", "values"});
    cfg.ablation.method = get<std::string>(a, "method", "ablation", cfg.ablation.method);
    cfg.ablation.values = get<std::vector<double>>(a, "values", "ablation", cfg.ablation.values);
    require(!cfg.ablation.values.empty(), a, "ablation.values", "needs at least one value");
  }

  cfg.output = get<std::string>(root, "output", "", "");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

/// Canonical YAML form; parse(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "world" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << c.world.kind;
  out << YAML::Key << "n" << YAML::Value << c.world.n;
  out << YAML::Key << "train_fraction" << YAML::Value << c.world.train_fraction;
  out << YAML::Key << "n_test" << YAML::Value << c.world.n_test;
  out << YAML::Key << "dim" << YAML::Value << c.world.dim;
  out << YAML::Key << "bins" << YAML::Value << c.world.bins;
  if (!c.world.path.empty()) out << YAML::Key << "path" << YAML::Value << c.world.path;
  out << YAML::Key << "task" << YAML::Value << c.world.task;
  out << YAML::Key << "observed_mode" << YAML::Value << c.world.observed_mode;
  if (!c.world.features.empty()) {
    out << YAML::Key << "features" << YAML::Value << YAML::BeginSeq;
    for (const auto& f : c.world.features) {
      out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << f.name;
      const auto kj = kind_to_json(f.kind);
      for (const auto& [k, v] : kj.items()) {
        out << YAML::Key << k << YAML::Value;
        if (v.is_string()) out << v.get<std::string>();
        else if (v.is_array()) out << YAML::Flow << v.get<std::vector<std::size_t>>();
        else if (v.is_number_integer()) out << v.get<long long>();
        else out << v.get<double>();
      }
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;

  out << YAML::Key << "regimes" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : c.regimes)
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << r.name << YAML::Key << "mechanism" << YAML::Value
        << r.mechanism << YAML::Key << "p" << YAML::Value << r.p << YAML::Key << "q" << YAML::Value << r.q
        << YAML::EndMap;
  out << YAML::EndSeq;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << c.train.steps;
  out << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate;
  out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << c.train.hidden;
  out << YAML::Key << "trace_every" << YAML::Value << c.train.trace_every;
  out << YAML::EndMap;

  out << YAML::Key << "methods" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : c.methods) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << m.name;
    out << YAML::Key << "kind" << YAML::Value << to_string(m.kind);
    if (m.rate) out << YAML::Key << "rate" << YAML::Value << *m.rate;
    out << YAML::Key << "p_clean" << YAML::Value << m.p_clean;
    if (m.placeholder) out << YAML::Key << "placeholder" << YAML::Value << *m.placeholder;
    if (m.observed_placeholder) out << YAML::Key << "observed_placeholder" << YAML::Value << *m.observed_placeholder;
    out << YAML::Key << "dual_placeholder" << YAML::Value << m.dual_placeholder;
    out << YAML::Key << "granularity" << YAML::Value << to_string(m.granularity);
    out << YAML::Key << "k" << YAML::Value << m.k;
    out << YAML::Key << "dropout_rescale" << YAML::Value << m.dropout_rescale;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "k_max" << YAML::Value << c.sweep.k_max;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.sweep.seeds;
  out << YAML::Key << "root_seed" << YAML::Value << c.sweep.root_seed;
  out << YAML::EndMap;

  out << YAML::Key << "placeholders" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "zscore_magnitude" << YAML::Value << c.placeholders.zscore_magnitude;
  out << YAML::Key << "categorical_encoding" << YAML::Value << c.placeholders.categorical_encoding;
  out << YAML::EndMap;

  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "method" << YAML::Value << c.ablation.method;
  out << YAML::Key << "values" << YAML::Value << YAML::Flow << c.ablation.values;
  out << YAML::EndMap;

  if (!c.output.empty()) out << YAML::Key << "output" << YAML::Value << c.output;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace knockout
