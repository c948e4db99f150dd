#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/mask.hpp"

namespace knockout {

// Feature kinds. Categorical values are integer codes 1..n_classes.

struct Categorical {
  int n_classes = 2;
};
struct ContinuousBounded {
  double lo = 0.0;
  double hi = 1.0;
};
enum class BoundSide { lower, upper };
struct ContinuousHalfBounded {
  double bound = 0.0;
  BoundSide side = BoundSide::lower;
};
struct ContinuousUnbounded {};
/// Column belonging to a structured block (latent vector, image) that goes
/// missing as a whole. Every member column carries the same descriptor.
struct StructuredGroup {
  int dim = 1;
  std::vector<std::size_t> members;
};

using FeatureKind = std::variant<Categorical, ContinuousBounded, ContinuousHalfBounded, ContinuousUnbounded, StructuredGroup>;

inline void validate_kind(const FeatureKind& kind) {
  std::visit(
      [](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Categorical>) {
          if (k.n_classes < 2) throw Error("categorical feature needs n_classes >= 2");
        } else if constexpr (std::is_same_v<K, ContinuousBounded>) {
          if (!(k.lo < k.hi)) throw Error("bounded feature needs lo < hi");
        } else if constexpr (std::is_same_v<K, StructuredGroup>) {
          if (k.dim < 1) throw Error("structured group needs dim >= 1");
          if (static_cast<std::size_t>(k.dim) != k.members.size())
            throw Error("structured group dim does not match its member count");
          std::set<std::size_t> seen(k.members.begin(), k.members.end());
          if (seen.size() != k.members.size()) throw Error("structured group member indices must be distinct");
        }
      },
      kind);
}

inline bool is_categorical(const FeatureKind& k) { return std::holds_alternative<Categorical>(k); }

enum class NormMode { none, zscore, scale01, scale0inf };

struct FeatureStats {
  NormMode mode = NormMode::none;
  double mean = 0.0;  // zscore
  double std = 1.0;   // zscore
  double lo = 0.0;    // scale01
  double hi = 1.0;    // scale01
  double shift = 0.0; // scale0inf
  BoundSide side = BoundSide::lower;

  double apply(double x) const {
    switch (mode) {
      case NormMode::zscore: return (x - mean) / std;
      case NormMode::scale01: return (x - lo) / (hi - lo);
      case NormMode::scale0inf: return side == BoundSide::lower ? x - shift : shift - x;
      case NormMode::none: break;
    }
    return x;
  }
  double invert(double z) const {
    switch (mode) {
      case NormMode::zscore: return z * std + mean;
      case NormMode::scale01: return z * (hi - lo) + lo;
      case NormMode::scale0inf: return side == BoundSide::lower ? z + shift : shift - z;
      case NormMode::none: break;
    }
    return z;
  }
};

struct NormalizationStats {
  std::vector<FeatureStats> features;

  std::size_t dim() const { return features.size(); }

  void validate() const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto& f = features[i];
      if (f.mode == NormMode::zscore && !(f.std > 0.0))
        throw Error("feature " + std::to_string(i) + ": zscore std must be positive");
      if (f.mode == NormMode::scale01 && !(f.hi > f.lo))
        throw Error("feature " + std::to_string(i) + ": scale01 needs hi > lo");
    }
  }
};

/// How categorical features reach the network. extra_class: one-hot over
/// n + 2 slots (classes, knockout slot, observed-missing slot). zero_onehot:
/// the knockout placeholder encodes as all zeros, the observed-missing
/// placeholder takes one extra slot (n + 1 wide).
enum class CategoricalEncoding { extra_class, zero_onehot };

/// Placeholder values in normalized coordinates: x̄ for induced (knockout)
/// missingness, ẋ for observed MAR/MNAR missingness.
struct PlaceholderPolicy {
  Eigen::VectorXd knockout_values;
  Eigen::VectorXd observed_values;
  double zscore_magnitude = 10.0;

  std::size_t dim() const { return static_cast<std::size_t>(knockout_values.size()); }

  void validate() const {
    if (knockout_values.size() != observed_values.size()) throw Error("placeholder vectors differ in length");
    for (Eigen::Index i = 0; i < knockout_values.size(); ++i)
      if (knockout_values(i) == observed_values(i))
        throw Error("placeholder invariant violated for feature " + std::to_string(i) +
                    ": observed-missing placeholder equals knockout placeholder (" +
                    std::to_string(knockout_values(i)) + ")");
  }
};

struct Feature {
  std::string name;
  FeatureKind kind;
};

/// Ordered feature list; structured-group columns define the group
/// partition, every other column is its own singleton group.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<Feature> features, CategoricalEncoding encoding = CategoricalEncoding::extra_class)
      : features_(std::move(features)), encoding_(encoding) {
    for (const auto& f : features_) validate_kind(f.kind);
    build_groups();
  }

  /// d unbounded continuous features named x1..xd.
  static FeatureSchema all_unbounded(std::size_t d) {
    std::vector<Feature> fs;
    for (std::size_t i = 0; i < d; ++i) fs.push_back({"x" + std::to_string(i + 1), ContinuousUnbounded{}});
    return FeatureSchema(std::move(fs));
  }

  std::size_t dim() const { return features_.size(); }
  const std::vector<Feature>& features() const { return features_; }
  const Feature& feature(std::size_t i) const { return features_.at(i); }
  CategoricalEncoding encoding() const { return encoding_; }

  /// Partition of {0..d-1}: structured groups plus singletons, ordered by
  /// smallest member.
  const std::vector<std::vector<std::size_t>>& groups() const { return groups_; }
  bool has_structured_groups() const { return groups_.size() != features_.size(); }

  std::vector<bool> categorical_flags() const {
    std::vector<bool> out;
    for (const auto& f : features_) out.push_back(is_categorical(f.kind));
    return out;
  }

  std::size_t encoded_width() const {
    std::size_t w = 0;
    for (const auto& f : features_) w += encoded_width(f.kind);
    return w;
  }

  /// Maps a normalized row onto network inputs. Categorical codes outside
  /// 1..n+2 encode as all zeros.
  template <class In, class Out>
  void encode(const In& row, Out&& out) const {
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      const double v = row(static_cast<Eigen::Index>(i));
      if (const auto* c = std::get_if<Categorical>(&features_[i].kind)) {
        const auto width = static_cast<Eigen::Index>(encoded_width(*c));
        for (Eigen::Index s = 0; s < width; ++s) out(k + s) = 0.0;
        const long code = std::lround(v);
        if (static_cast<double>(code) == v) {
          long slot = -1;
          if (code >= 1 && code <= c->n_classes) {
            slot = code - 1;
          } else if (code == c->n_classes + 1) {
            slot = encoding_ == CategoricalEncoding::extra_class ? c->n_classes : -1;
          } else if (code == c->n_classes + 2) {
            slot = encoding_ == CategoricalEncoding::extra_class ? c->n_classes + 1 : c->n_classes;
          }
          if (slot >= 0) out(k + slot) = 1.0;
        }
        k += width;
      } else {
        out(k++) = v;
      }
    }
  }

  Eigen::MatrixXd encode_rows(const Eigen::MatrixXd& rows) const {
    Eigen::MatrixXd out(rows.rows(), static_cast<Eigen::Index>(encoded_width()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      auto dst = out.row(r);
      encode(rows.row(r), dst);
    }
    return out;
  }

 private:
  std::size_t encoded_width(const FeatureKind& k) const {
    if (const auto* c = std::get_if<Categorical>(&k)) return encoded_width(*c);
    return 1;
  }
  std::size_t encoded_width(const Categorical& c) const {
    return static_cast<std::size_t>(c.n_classes) + (encoding_ == CategoricalEncoding::extra_class ? 2 : 1);
  }

  void build_groups() {
    const std::size_t d = features_.size();
    std::vector<int> owner(d, -1);
    groups_.clear();
    for (std::size_t i = 0; i < d; ++i) {
      if (owner[i] >= 0) continue;
      if (const auto* g = std::get_if<StructuredGroup>(&features_[i].kind)) {
        std::vector<std::size_t> members = g->members;
        std::sort(members.begin(), members.end());
        if (std::find(members.begin(), members.end(), i) == members.end())
          throw Error("feature '" + features_[i].name + "' is not listed among its own group members");
        for (auto m : members) {
          if (m >= d) throw Error("structured group member index out of range");
          const auto* other = std::get_if<StructuredGroup>(&features_[m].kind);
          if (!other) throw Error("structured group member '" + features_[m].name + "' is not a group column");
          auto om = other->members;
          std::sort(om.begin(), om.end());
          if (om != members) throw Error("structured group members disagree between columns");
          if (owner[m] >= 0) throw Error("structured groups overlap");
          owner[m] = static_cast<int>(groups_.size());
        }
        groups_.push_back(std::move(members));
      } else {
        owner[i] = static_cast<int>(groups_.size());
        groups_.push_back({i});
      }
    }
  }

  std::vector<Feature> features_;
  CategoricalEncoding encoding_ = CategoricalEncoding::extra_class;
  std::vector<std::vector<std::size_t>> groups_;
};

inline NormMode norm_mode_for(const FeatureKind& kind) {
  return std::visit(
      [](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Categorical>) return NormMode::none;
        else if constexpr (std::is_same_v<K, ContinuousBounded>) return NormMode::scale01;
        else if constexpr (std::is_same_v<K, ContinuousHalfBounded>) return NormMode::scale0inf;
        else return NormMode::zscore;
      },
      kind);
}

/// Fits per-feature normalization on observed entries only. Bounded features
/// scale by their declared support so that [lo, hi] maps onto [0, 1] exactly;
/// zscore uses the population standard deviation.
inline NormalizationStats fit_normalization(const FeatureSchema& schema, const Eigen::MatrixXd& raw,
                                            const MaskMatrix* missing = nullptr) {
  if (static_cast<std::size_t>(raw.cols()) != schema.dim()) throw Error("dataset width does not match schema");
  if (raw.rows() == 0) throw Error("cannot fit normalization on an empty dataset");
  if (missing && (missing->rows() != raw.rows() || missing->cols() != raw.cols()))
    throw Error("missingness mask shape does not match dataset");
  NormalizationStats stats;
  for (std::size_t j = 0; j < schema.dim(); ++j) {
    const auto& f = schema.feature(j);
    const auto col = static_cast<Eigen::Index>(j);
    std::vector<double> obs;
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      if (!missing || !(*missing)(i, col)) obs.push_back(raw(i, col));
    if (obs.empty()) throw Error("feature '" + f.name + "' has no observed entries");

    FeatureStats fs;
    fs.mode = norm_mode_for(f.kind);
    if (fs.mode == NormMode::zscore) {
      double sum = 0.0;
      for (double v : obs) sum += v;
      fs.mean = sum / static_cast<double>(obs.size());
      double ss = 0.0;
      for (double v : obs) ss += (v - fs.mean) * (v - fs.mean);
      fs.std = std::sqrt(ss / static_cast<double>(obs.size()));
      if (!(fs.std > 0.0)) throw Error("constant feature '" + f.name + "': standard deviation is zero");
    } else if (const auto* b = std::get_if<ContinuousBounded>(&f.kind)) {
      fs.lo = b->lo;
      fs.hi = b->hi;
      for (double v : obs)
        if (v < b->lo || v > b->hi) throw Error("feature '" + f.name + "' has values outside its declared support");
    } else if (const auto* h = std::get_if<ContinuousHalfBounded>(&f.kind)) {
      fs.shift = h->bound;
      fs.side = h->side;
      for (double v : obs)
        if ((h->side == BoundSide::lower && v < h->bound) || (h->side == BoundSide::upper && v > h->bound))
          throw Error("feature '" + f.name + "' has values outside its declared support");
    } else if (const auto* c = std::get_if<Categorical>(&f.kind)) {
      for (double v : obs)
        if (v != std::round(v) || v < 1 || v > c->n_classes)
          throw Error("feature '" + f.name + "' has a value that is not a category code in 1.." +
                      std::to_string(c->n_classes));
    }
    stats.features.push_back(fs);
  }
  stats.validate();
  return stats;
}

inline Eigen::VectorXd apply_normalization(const Eigen::Ref<const Eigen::VectorXd>& row, const NormalizationStats& stats) {
  if (static_cast<std::size_t>(row.size()) != stats.dim()) throw Error("row length does not match normalization stats");
  Eigen::VectorXd out(row.size());
  for (Eigen::Index j = 0; j < row.size(); ++j) out(j) = stats.features[static_cast<std::size_t>(j)].apply(row(j));
  return out;
}

inline Eigen::VectorXd denormalize(const Eigen::Ref<const Eigen::VectorXd>& row, const NormalizationStats& stats) {
  if (static_cast<std::size_t>(row.size()) != stats.dim()) throw Error("row length does not match normalization stats");
  Eigen::VectorXd out(row.size());
  for (Eigen::Index j = 0; j < row.size(); ++j) out(j) = stats.features[static_cast<std::size_t>(j)].invert(row(j));
  return out;
}

inline Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& rows, const NormalizationStats& stats) {
  if (static_cast<std::size_t>(rows.cols()) != stats.dim()) throw Error("row length does not match normalization stats");
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const auto& f = stats.features[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < rows.rows(); ++i) out(i, j) = f.apply(rows(i, j));
  }
  return out;
}

/// Placeholders per feature kind, in normalized coordinates:
///   Categorical(n)      x̄ = n + 1, ẋ = n + 2
///   bounded -> [0, 1]   x̄ = -1,    ẋ = 2
///   half-bounded        x̄ = -1,    ẋ = -2
///   unbounded (zscore)  x̄ = +m,    ẋ = -m   (m = zscore_magnitude)
///   structured group    x̄ = 0,     ẋ = -1   (per member column)
inline PlaceholderPolicy derive_placeholders(const FeatureSchema& schema, const NormalizationStats& stats,
                                             double zscore_magnitude = 10.0) {
  if (stats.dim() != schema.dim()) throw Error("normalization stats do not match schema");
  if (!(zscore_magnitude > 0.0)) throw Error("zscore_magnitude must be positive");
  const auto d = static_cast<Eigen::Index>(schema.dim());
  PlaceholderPolicy p{Eigen::VectorXd(d), Eigen::VectorXd(d), zscore_magnitude};
  for (Eigen::Index i = 0; i < d; ++i) {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Categorical>) {
            p.knockout_values(i) = k.n_classes + 1;
            p.observed_values(i) = k.n_classes + 2;
          } else if constexpr (std::is_same_v<K, ContinuousBounded>) {
            p.knockout_values(i) = -1.0;
            p.observed_values(i) = 2.0;
          } else if constexpr (std::is_same_v<K, ContinuousHalfBounded>) {
            p.knockout_values(i) = -1.0;
            p.observed_values(i) = -2.0;
          } else if constexpr (std::is_same_v<K, ContinuousUnbounded>) {
            p.knockout_values(i) = zscore_magnitude;
            p.observed_values(i) = -zscore_magnitude;
          } else if constexpr (std::is_same_v<K, StructuredGroup>) {
            p.knockout_values(i) = 0.0;
            p.observed_values(i) = -1.0;
          }
        },
        schema.feature(static_cast<std::size_t>(i)).kind);
  }
  p.validate();
  return p;
}

/// Normalized-coordinate support of a feature as a closed interval; used
/// for out-of-support checks. Unbounded sides are infinite.
inline std::pair<double, double> normalized_support(const FeatureKind& kind) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (const auto* c = std::get_if<Categorical>(&kind)) return {1.0, static_cast<double>(c->n_classes)};
  if (std::holds_alternative<ContinuousBounded>(kind)) return {0.0, 1.0};
  if (std::holds_alternative<ContinuousHalfBounded>(kind)) return {0.0, inf};
  return {-inf, inf};
}

}  // namespace knockout
