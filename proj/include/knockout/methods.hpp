#pragma once

#include <json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knockout/augment.hpp"
#include "knockout/baselines.hpp"
#include "knockout/dataset.hpp"
#include "knockout/missingness.hpp"
#include "knockout/nn.hpp"
#include "knockout/schema.hpp"
#include "knockout/serialize.hpp"

// Training recipes for Knockout and the comparison methods. Every method
// shares the same network and optimizer; they differ only in how training
// rows are prepared and how missing test entries are filled.

namespace knockout {

enum class Task { regression, classification };

enum class MethodKind { knockout, knockout_star, common_baseline, zero_indicator, knn, linreg, dropout };

inline const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::knockout: return "knockout";
    case MethodKind::knockout_star: return "knockout_star";
    case MethodKind::common_baseline: return "common_baseline";
    case MethodKind::zero_indicator: return "zero_indicator";
    case MethodKind::knn: return "knn";
    case MethodKind::linreg: return "linreg";
    case MethodKind::dropout: return "dropout";
  }
  return "?";
}

inline MethodKind method_kind_from_string(const std::string& s) {
  for (auto k : {MethodKind::knockout, MethodKind::knockout_star, MethodKind::common_baseline, MethodKind::zero_indicator,
                 MethodKind::knn, MethodKind::linreg, MethodKind::dropout})
    if (s == to_string(k)) return k;
  throw Error("unknown method kind '" + s + "'");
}

inline const char* to_string(MaskGranularity g) { return g == MaskGranularity::per_batch ? "per_batch" : "per_sample"; }

inline MaskGranularity granularity_from_string(const std::string& s) {
  if (s == "per_batch") return MaskGranularity::per_batch;
  if (s == "per_sample") return MaskGranularity::per_sample;
  throw Error("unknown mask granularity '" + s + "'");
}

struct MethodSpec {
  std::string name;
  MethodKind kind = MethodKind::knockout;
  std::optional<double> rate;  // knockout or dropout rate; calibrated from p_clean when absent
  double p_clean = 0.5;
  std::optional<double> placeholder;           // x̄ for z-scored features
  std::optional<double> observed_placeholder;  // ẋ for z-scored features
  bool dual_placeholder = true;                // false gives Knockout⁻
  MaskGranularity granularity = MaskGranularity::per_batch;
  std::size_t k = 5;
  bool dropout_rescale = false;

  bool operator==(const MethodSpec&) const = default;
};

inline nlohmann::json method_spec_to_json(const MethodSpec& m) {
  nlohmann::json j{{"name", m.name},
                   {"kind", to_string(m.kind)},
                   {"p_clean", m.p_clean},
                   {"dual_placeholder", m.dual_placeholder},
                   {"granularity", to_string(m.granularity)},
                   {"k", m.k},
                   {"dropout_rescale", m.dropout_rescale}};
  if (m.rate) j["rate"] = *m.rate;
  if (m.placeholder) j["placeholder"] = *m.placeholder;
  if (m.observed_placeholder) j["observed_placeholder"] = *m.observed_placeholder;
  return j;
}

inline MethodSpec method_spec_from_json(const nlohmann::json& j) {
  MethodSpec m;
  m.name = j.at("name").get<std::string>();
  m.kind = method_kind_from_string(j.at("kind").get<std::string>());
  m.p_clean = j.at("p_clean").get<double>();
  m.dual_placeholder = j.at("dual_placeholder").get<bool>();
  m.granularity = granularity_from_string(j.at("granularity").get<std::string>());
  m.k = j.at("k").get<std::size_t>();
  m.dropout_rescale = j.at("dropout_rescale").get<bool>();
  if (j.contains("rate")) m.rate = j.at("rate").get<double>();
  if (j.contains("placeholder")) m.placeholder = j.at("placeholder").get<double>();
  if (j.contains("observed_placeholder")) m.observed_placeholder = j.at("observed_placeholder").get<double>();
  return m;
}

/// Raw training split with its observed-missingness mask. `observed_mode`
/// says how N arose and is required whenever N has set entries.
struct TrainingData {
  Task task = Task::regression;
  FeatureSchema schema;
  ObservedDataset train;
  std::optional<ObservedMode> observed_mode;
  int n_classes = 2;
};

struct TrainedMethod {
  MethodSpec spec;
  Task task = Task::regression;
  FeatureSchema schema;
  NormalizationStats stats;
  PlaceholderPolicy policy;
  std::optional<Imputer> imputer;
  double rate = 0.0;
  double target_mean = 0.0;
  double target_std = 1.0;
  NetworkSpec net;
  Parameters params;
  std::vector<TracePoint> trace;
};

/// Placeholder policy a method trains and predicts with.
inline PlaceholderPolicy method_policy(const MethodSpec& spec, const FeatureSchema& schema,
                                       const NormalizationStats& stats, double zscore_magnitude) {
  auto p = derive_placeholders(schema, stats, zscore_magnitude);
  for (std::size_t i = 0; i < schema.dim(); ++i) {
    if (stats.features[i].mode != NormMode::zscore || std::holds_alternative<StructuredGroup>(schema.feature(i).kind))
      continue;
    const auto k = static_cast<Eigen::Index>(i);
    if (spec.placeholder) p.knockout_values(k) = *spec.placeholder;
    if (spec.observed_placeholder) p.observed_values(k) = *spec.observed_placeholder;
  }
  p.validate();
  return p;
}

namespace detail {

inline Eigen::MatrixXd encode_inputs(const FeatureSchema& schema, const Eigen::MatrixXd& codes) {
  bool plain = true;
  for (const auto& f : schema.features()) plain = plain && !is_categorical(f.kind);
  return plain ? codes : schema.encode_rows(codes);
}

/// Observed-missing entries replaced by fill values.
inline Eigen::MatrixXd fill_missing(Eigen::MatrixXd z, const MaskMatrix& n, const Eigen::VectorXd& fill) {
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      if (n(i, j)) z(i, j) = fill(j);
  return z;
}

inline std::span<const std::uint8_t> mask_row(const MaskMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline bool any_set(const MaskMatrix& m) { return m.size() > 0 && m.maxCoeff() > 0; }

/// Network input for a fully prepared code matrix; ZeroIndicator appends
/// the indicator columns after encoding.
inline Eigen::MatrixXd network_inputs(const TrainedMethod& tm, const Eigen::MatrixXd& codes, const MaskMatrix& missing) {
  Eigen::MatrixXd enc = encode_inputs(tm.schema, codes);
  if (tm.spec.kind != MethodKind::zero_indicator) return enc;
  Eigen::MatrixXd out(enc.rows(), enc.cols() + missing.cols());
  out << enc, missing.cast<double>().matrix();
  return out;
}

/// Fills every missing entry (union of induced and observed) for the
/// imputation-style methods.
inline Eigen::MatrixXd impute_codes(const TrainedMethod& tm, const Eigen::MatrixXd& z, const MaskMatrix& missing) {
  switch (tm.spec.kind) {
    case MethodKind::common_baseline:
      return fill_missing(z, missing, std::get<MeanModeImputer>(*tm.imputer).fill);
    case MethodKind::zero_indicator:
    case MethodKind::dropout:
      return fill_missing(z, missing, Eigen::VectorXd::Zero(z.cols()));
    case MethodKind::knn:
    case MethodKind::linreg: {
      Eigen::MatrixXd out = z;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        auto m = row_mask(missing, i);
        if (!m.none()) out.row(i) = impute(*tm.imputer, z.row(i).transpose(), m).transpose();
      }
      return out;
    }
    default: break;
  }
  throw Error("impute_codes called for a placeholder method");
}

inline bool is_placeholder_method(MethodKind k) { return k == MethodKind::knockout || k == MethodKind::knockout_star; }

/// How observed-missing training entries are merged for placeholder methods.
inline ObservedMode training_mode(const MethodSpec& spec, std::optional<ObservedMode> data_mode) {
  if (spec.kind == MethodKind::knockout && spec.dual_placeholder && data_mode == ObservedMode::mnar) return ObservedMode::mnar;
  return ObservedMode::mcar;
}

}  // namespace detail

struct NetworkOptions {
  std::vector<std::size_t> hidden{100, 100};
  double zscore_magnitude = 10.0;
};

/// Fits normalization, placeholders and any imputer on the training split,
/// then trains the network with the method's augmentation.
inline TrainedMethod train_method(const MethodSpec& spec, const TrainingData& data, const TrainConfig& base_cfg,
                                  const NetworkOptions& net_opts = {}, std::ostream* warn = &std::clog) {
  const auto& schema = data.schema;
  const auto& raw = data.train.data;
  const auto& n_mask = data.train.missing;
  if (static_cast<std::size_t>(raw.x.cols()) != schema.dim()) throw Error("training data width does not match schema");
  if (detail::any_set(n_mask) && !data.observed_mode)
    throw Error("training data has observed missingness but no mechanism tag");

  TrainedMethod tm;
  tm.spec = spec;
  tm.task = data.task;
  tm.schema = schema;
  tm.stats = fit_normalization(schema, raw.x, &n_mask);
  tm.policy = method_policy(spec, schema, tm.stats, net_opts.zscore_magnitude);
  const Eigen::MatrixXd z = normalize_rows(raw.x, tm.stats);
  const auto categorical = schema.categorical_flags();
  auto cat_flags = std::make_unique<bool[]>(categorical.size());
  std::copy(categorical.begin(), categorical.end(), cat_flags.get());
  std::span<const bool> cat_span(cat_flags.get(), categorical.size());

  switch (spec.kind) {
    case MethodKind::knockout_star:
    case MethodKind::common_baseline:
      tm.imputer = fit_imputer({ImputerKind::mean_mode}, z, n_mask, cat_span, warn);
      if (spec.kind == MethodKind::knockout_star)
        tm.policy = mean_mode_policy(tm.policy, std::get<MeanModeImputer>(*tm.imputer));
      break;
    case MethodKind::zero_indicator: tm.imputer = fit_imputer({ImputerKind::zero_indicator}, z, n_mask, cat_span, warn); break;
    case MethodKind::knn: tm.imputer = fit_imputer({ImputerKind::knn, spec.k}, z, n_mask, cat_span, warn); break;
    case MethodKind::linreg: tm.imputer = fit_imputer({ImputerKind::linreg}, z, n_mask, cat_span, warn); break;
    default: break;
  }

  const auto groups = schema.groups();
  if (spec.kind == MethodKind::knockout || spec.kind == MethodKind::knockout_star)
    tm.rate = spec.rate ? *spec.rate : calibrate_rate(groups.size(), spec.p_clean);
  else if (spec.kind == MethodKind::dropout)
    tm.rate = spec.rate ? *spec.rate : calibrate_rate(schema.dim(), spec.p_clean);

  // Targets: standardized regression values or class indices.
  Eigen::MatrixXd targets(raw.y.size(), 1);
  TrainConfig cfg = base_cfg;
  Head head = Head::linear;
  std::size_t out_width = 1;
  if (data.task == Task::regression) {
    tm.target_mean = raw.y.mean();
    const double var = (raw.y.array() - tm.target_mean).square().mean();
    tm.target_std = var > 0.0 ? std::sqrt(var) : 1.0;
    targets.col(0) = (raw.y.array() - tm.target_mean) / tm.target_std;
    cfg.loss = LossKind::mse;
  } else {
    if (data.n_classes < 2) throw Error("classification needs at least two classes");
    for (Eigen::Index i = 0; i < raw.y.size(); ++i)
      if (raw.y(i) != std::round(raw.y(i)) || raw.y(i) < 0 || raw.y(i) >= data.n_classes)
        throw Error("class label out of range in training data");
    targets.col(0) = raw.y;
    cfg.loss = LossKind::cross_entropy;
    head = Head::logits;
    out_width = static_cast<std::size_t>(data.n_classes);
  }
  cfg.granularity = spec.granularity;

  std::size_t in_width = schema.encoded_width();
  if (spec.kind == MethodKind::zero_indicator) in_width += schema.dim();
  tm.net = NetworkSpec::mlp(in_width, net_opts.hidden, out_width, head);

  BatchSource source;
  source.rows = raw.x.rows();
  source.targets = targets;
  if (detail::is_placeholder_method(spec.kind)) {
    const auto dist = schema.has_structured_groups() ? MaskDistribution::grouped(schema.dim(), groups, tm.rate)
                                                     : MaskDistribution::iid(schema.dim(), tm.rate);
    const auto mode = detail::training_mode(spec, data.observed_mode);
    const auto* tmp = &tm;
    source.inputs = [z, n_mask, dist, mode, tmp, granularity = spec.granularity](std::span<const Eigen::Index> rows,
                                                                                 Rng& rng) {
      Eigen::MatrixXd codes(static_cast<Eigen::Index>(rows.size()), z.cols());
      Mask m = granularity == MaskGranularity::per_batch ? sample_mask(dist, rng) : Mask();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (granularity == MaskGranularity::per_sample) m = sample_mask(dist, rng);
        auto row = codes.row(static_cast<Eigen::Index>(r));
        row = z.row(rows[r]);
        merge_observed_inplace(row, detail::mask_row(n_mask, rows[r]), m, mode, tmp->policy);
      }
      return detail::encode_inputs(tmp->schema, codes);
    };
  } else if (spec.kind == MethodKind::dropout) {
    Eigen::MatrixXd base = detail::fill_missing(z, n_mask, Eigen::VectorXd::Zero(z.cols()));
    const auto* tmp = &tm;
    const double rate = tm.rate;
    const bool rescale = spec.dropout_rescale;
    source.inputs = [base, tmp, rate, rescale](std::span<const Eigen::Index> rows, Rng& rng) {
      Eigen::MatrixXd codes(static_cast<Eigen::Index>(rows.size()), base.cols());
      for (std::size_t r = 0; r < rows.size(); ++r)
        codes.row(static_cast<Eigen::Index>(r)) = dropout_augment(base.row(rows[r]).transpose(), rate, rng, rescale).transpose();
      return detail::encode_inputs(tmp->schema, codes);
    };
  } else {
    Eigen::MatrixXd prepared = detail::network_inputs(tm, detail::impute_codes(tm, z, n_mask), n_mask);
    source = BatchSource::from_matrix(std::move(prepared), targets);
  }

  auto result = train(tm.net, cfg, source);
  tm.params = std::move(result.params);
  tm.trace = std::move(result.trace);
  return tm;
}

/// Test-time network inputs. `induced` marks entries removed by the
/// evaluation pattern; `observed` marks entries missing in the data, tagged
/// by `observed_mode` (MNAR entries take ẋ for dual-placeholder Knockout).
inline Eigen::MatrixXd prepare_inputs(const TrainedMethod& tm, const Eigen::MatrixXd& raw_x, const MaskMatrix& induced,
                                      const MaskMatrix* observed = nullptr,
                                      std::optional<ObservedMode> observed_mode = std::nullopt) {
  if (static_cast<std::size_t>(raw_x.cols()) != tm.schema.dim()) throw Error("input width does not match the model");
  if (induced.rows() != raw_x.rows() || induced.cols() != raw_x.cols()) throw Error("mask shape does not match inputs");
  if (observed && (observed->rows() != raw_x.rows() || observed->cols() != raw_x.cols()))
    throw Error("observed mask shape does not match inputs");
  Eigen::MatrixXd z = normalize_rows(raw_x, tm.stats);
  if (detail::is_placeholder_method(tm.spec.kind)) {
    const bool has_obs = observed && detail::any_set(*observed);
    if (has_obs && !observed_mode) throw Error("observed missingness at test time needs a mechanism tag");
    const auto mode = has_obs ? detail::training_mode(tm.spec, observed_mode) : ObservedMode::mcar;
    const std::vector<std::uint8_t> none(static_cast<std::size_t>(z.cols()), 0);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      auto row = z.row(i);
      merge_observed_inplace(row, has_obs ? detail::mask_row(*observed, i) : std::span<const std::uint8_t>(none),
                             row_mask(induced, i), mode, tm.policy);
    }
    return detail::encode_inputs(tm.schema, z);
  }
  MaskMatrix all = induced;
  if (observed) all = all.max(*observed);
  return detail::network_inputs(tm, detail::impute_codes(tm, z, all), all);
}

/// Regression: n x 1 predictions in target units. Classification: n x K
/// class probabilities.
inline Eigen::MatrixXd predict_prepared(const TrainedMethod& tm, const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd out = predict(tm.net, tm.params, inputs);
  if (tm.task == Task::regression) out = (out.array() * tm.target_std + tm.target_mean).matrix();
  return out;
}

inline Eigen::MatrixXd predict_method(const TrainedMethod& tm, const Eigen::MatrixXd& raw_x, const MaskMatrix& induced,
                                      const MaskMatrix* observed = nullptr,
                                      std::optional<ObservedMode> observed_mode = std::nullopt) {
  return predict_prepared(tm, prepare_inputs(tm, raw_x, induced, observed, observed_mode));
}

inline nlohmann::json trained_method_to_json(const TrainedMethod& tm) {
  nlohmann::json j;
  j["format"] = "knockout-model/1";
  j["method"] = method_spec_to_json(tm.spec);
  j["task"] = tm.task == Task::regression ? "regression" : "classification";
  j["schema"] = schema_to_json(tm.schema);
  j["normalization"] = stats_to_json(tm.stats);
  j["placeholders"] = policy_to_json(tm.policy);
  if (tm.imputer) j["imputer"] = imputer_to_json(*tm.imputer);
  j["rate"] = tm.rate;
  j["target"] = {{"mean", tm.target_mean}, {"std", tm.target_std}};
  j["network"] = network_to_json(tm.net, tm.params);
  return j;
}

inline TrainedMethod trained_method_from_json(const nlohmann::json& j) {
  if (j.at("format").get<std::string>() != "knockout-model/1") throw Error("unsupported model file format");
  TrainedMethod tm;
  tm.spec = method_spec_from_json(j.at("method"));
  const auto task = j.at("task").get<std::string>();
  if (task != "regression" && task != "classification") throw Error("unknown task '" + task + "'");
  tm.task = task == "regression" ? Task::regression : Task::classification;
  tm.schema = schema_from_json(j.at("schema"));
  tm.stats = stats_from_json(j.at("normalization"));
  tm.policy = policy_from_json(j.at("placeholders"));
  if (j.contains("imputer")) tm.imputer = imputer_from_json(j.at("imputer"));
  tm.rate = j.at("rate").get<double>();
  tm.target_mean = j.at("target").at("mean").get<double>();
  tm.target_std = j.at("target").at("std").get<double>();
  std::tie(tm.net, tm.params) = network_from_json(j.at("network"));
  if (tm.stats.dim() != tm.schema.dim() || tm.policy.dim() != tm.schema.dim())
    throw Error("model file is inconsistent with its schema");
  return tm;
}

}  // namespace knockout
