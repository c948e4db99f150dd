#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "knockout/baselines.hpp"
#include "knockout/error.hpp"
#include "knockout/schema.hpp"

// JSON forms of the schema, fitted statistics, placeholders and imputers,
// stored next to trained networks.

namespace knockout {

namespace detail {

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.begin(), v.end()}; }

inline Eigen::VectorXd from_vector(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return j;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    auto row = j[r].get<std::vector<double>>();
    if (row.size() != static_cast<std::size_t>(cols)) throw Error("serialized matrix has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace detail

inline const char* to_string(NormMode m) {
  switch (m) {
    case NormMode::zscore: return "zscore";
    case NormMode::scale01: return "scale01";
    case NormMode::scale0inf: return "scale0inf";
    case NormMode::none: break;
  }
  return "none";
}

inline NormMode norm_mode_from_string(const std::string& s) {
  if (s == "zscore") return NormMode::zscore;
  if (s == "scale01") return NormMode::scale01;
  if (s == "scale0inf") return NormMode::scale0inf;
  if (s == "none") return NormMode::none;
  throw Error("unknown normalization mode '" + s + "'");
}

inline nlohmann::json kind_to_json(const FeatureKind& kind) {
  return std::visit(
      [](const auto& k) -> nlohmann::json {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Categorical>) return {{"kind", "categorical"}, {"n_classes", k.n_classes}};
        else if constexpr (std::is_same_v<K, ContinuousBounded>) return {{"kind", "bounded"}, {"lo", k.lo}, {"hi", k.hi}};
        else if constexpr (std::is_same_v<K, ContinuousHalfBounded>)
          return {{"kind", "half_bounded"}, {"bound", k.bound}, {"side", k.side == BoundSide::lower ? "lower" : "upper"}};
        else if constexpr (std::is_same_v<K, ContinuousUnbounded>) return {{"kind", "unbounded"}};
        else return {{"kind", "group"}, {"dim", k.dim}, {"members", k.members}};
      },
      kind);
}

inline FeatureKind kind_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "categorical") return Categorical{j.at("n_classes").get<int>()};
  if (kind == "bounded") return ContinuousBounded{j.at("lo").get<double>(), j.at("hi").get<double>()};
  if (kind == "half_bounded") {
    const auto side = j.at("side").get<std::string>();
    if (side != "lower" && side != "upper") throw Error("half-bounded side must be 'lower' or 'upper'");
    return ContinuousHalfBounded{j.at("bound").get<double>(), side == "lower" ? BoundSide::lower : BoundSide::upper};
  }
  if (kind == "unbounded") return ContinuousUnbounded{};
  if (kind == "group")
    return StructuredGroup{j.at("dim").get<int>(), j.at("members").get<std::vector<std::size_t>>()};
  throw Error("unknown feature kind '" + kind + "'");
}

inline nlohmann::json schema_to_json(const FeatureSchema& s) {
  nlohmann::json j;
  j["encoding"] = s.encoding() == CategoricalEncoding::extra_class ? "extra_class" : "zero_onehot";
  j["features"] = nlohmann::json::array();
  for (const auto& f : s.features()) {
    auto fj = kind_to_json(f.kind);
    fj["name"] = f.name;
    j["features"].push_back(std::move(fj));
  }
  return j;
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  std::vector<Feature> fs;
  for (const auto& fj : j.at("features")) fs.push_back({fj.at("name").get<std::string>(), kind_from_json(fj)});
  const auto enc = j.at("encoding").get<std::string>();
  if (enc != "extra_class" && enc != "zero_onehot") throw Error("unknown categorical encoding '" + enc + "'");
  return FeatureSchema(std::move(fs), enc == "extra_class" ? CategoricalEncoding::extra_class : CategoricalEncoding::zero_onehot);
}

inline nlohmann::json stats_to_json(const NormalizationStats& s) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : s.features)
    j.push_back({{"mode", to_string(f.mode)},
                 {"mean", f.mean},
                 {"std", f.std},
                 {"lo", f.lo},
                 {"hi", f.hi},
                 {"shift", f.shift},
                 {"side", f.side == BoundSide::lower ? "lower" : "upper"}});
  return j;
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  for (const auto& fj : j) {
    FeatureStats f;
    f.mode = norm_mode_from_string(fj.at("mode").get<std::string>());
    f.mean = fj.at("mean").get<double>();
    f.std = fj.at("std").get<double>();
    f.lo = fj.at("lo").get<double>();
    f.hi = fj.at("hi").get<double>();
    f.shift = fj.at("shift").get<double>();
    f.side = fj.at("side").get<std::string>() == "upper" ? BoundSide::upper : BoundSide::lower;
    s.features.push_back(f);
  }
  s.validate();
  return s;
}

inline nlohmann::json policy_to_json(const PlaceholderPolicy& p) {
  return {{"knockout_values", detail::to_vector(p.knockout_values)},
          {"observed_values", detail::to_vector(p.observed_values)},
          {"zscore_magnitude", p.zscore_magnitude}};
}

inline PlaceholderPolicy policy_from_json(const nlohmann::json& j) {
  PlaceholderPolicy p{detail::from_vector(j.at("knockout_values")), detail::from_vector(j.at("observed_values")),
                      j.at("zscore_magnitude").get<double>()};
  p.validate();
  return p;
}

inline nlohmann::json imputer_to_json(const Imputer& imp) {
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, MeanModeImputer>) {
          return {{"kind", "mean_mode"}, {"fill", detail::to_vector(m.fill)}};
        } else if constexpr (std::is_same_v<M, ZeroIndicatorImputer>) {
          return {{"kind", "zero_indicator"}, {"d", m.d}};
        } else if constexpr (std::is_same_v<M, KnnImputer>) {
          nlohmann::json miss = nlohmann::json::array();
          for (Eigen::Index r = 0; r < m.train_missing.rows(); ++r) {
            std::string bits(static_cast<std::size_t>(m.train_missing.cols()), '0');
            for (Eigen::Index c = 0; c < m.train_missing.cols(); ++c)
              if (m.train_missing(r, c)) bits[static_cast<std::size_t>(c)] = '1';
            miss.push_back(bits);
          }
          return {{"kind", "knn"},
                  {"k", m.k},
                  {"train", detail::matrix_to_json(m.train)},
                  {"train_missing", miss},
                  {"fallback", detail::to_vector(m.fallback)}};
        } else {
          nlohmann::json models = nlohmann::json::array();
          for (const auto& mod : m.models)
            models.push_back(
                {{"fallback", mod.fallback}, {"intercept", mod.intercept}, {"coef", detail::to_vector(mod.coef)}});
          return {{"kind", "linreg"}, {"models", models}, {"fallback", detail::to_vector(m.fallback)}};
        }
      },
      imp);
}

inline Imputer imputer_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "mean_mode") return MeanModeImputer{detail::from_vector(j.at("fill"))};
  if (kind == "zero_indicator") return ZeroIndicatorImputer{j.at("d").get<std::size_t>()};
  if (kind == "knn") {
    KnnImputer m;
    m.k = j.at("k").get<std::size_t>();
    m.fallback = detail::from_vector(j.at("fallback"));
    m.train = detail::matrix_from_json(j.at("train"), m.fallback.size());
    const auto& miss = j.at("train_missing");
    m.train_missing = MaskMatrix::Zero(m.train.rows(), m.train.cols());
    if (miss.size() != static_cast<std::size_t>(m.train.rows())) throw Error("serialized KNN mask has the wrong shape");
    for (std::size_t r = 0; r < miss.size(); ++r) {
      const auto row = Mask::from_string(miss[r].get<std::string>());
      if (row.size() != static_cast<std::size_t>(m.train.cols())) throw Error("serialized KNN mask has the wrong shape");
      for (std::size_t c = 0; c < row.size(); ++c)
        m.train_missing(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
    return m;
  }
  if (kind == "linreg") {
    LinRegImputer m;
    m.fallback = detail::from_vector(j.at("fallback"));
    for (const auto& mj : j.at("models"))
      m.models.push_back({mj.at("fallback").get<bool>(), mj.at("intercept").get<double>(), detail::from_vector(mj.at("coef"))});
    return m;
  }
  throw Error("unknown imputer kind '" + kind + "'");
}

}  // namespace knockout
