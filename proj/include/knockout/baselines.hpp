#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <iostream>
#include <map>
#include <span>
#include <variant>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/random.hpp"
#include "knockout/schema.hpp"

// Imputation baselines. All imputers work on normalized rows and leave
// observed entries untouched.

namespace knockout {

/// Per-feature mean (continuous) or mode (categorical) of observed entries.
struct MeanModeImputer {
  Eigen::VectorXd fill;
};

/// Missing entries become 0 and the mask is appended: output width 2d.
struct ZeroIndicatorImputer {
  std::size_t d = 0;
};

/// Average of the k nearest training rows that observe the missing feature.
/// Distance: mean squared difference over mutually observed coordinates.
struct KnnImputer {
  std::size_t k = 5;
  Eigen::MatrixXd train;
  MaskMatrix train_missing;
  Eigen::VectorXd fallback;
};

/// One least-squares model per target feature on the remaining features,
/// fitted on complete rows.
struct LinRegImputer {
  struct Model {
    bool fallback = false;
    double intercept = 0.0;
    Eigen::VectorXd coef;  // length d, zero at the target feature
  };
  std::vector<Model> models;
  Eigen::VectorXd fallback;
};

using Imputer = std::variant<MeanModeImputer, ZeroIndicatorImputer, KnnImputer, LinRegImputer>;

enum class ImputerKind { mean_mode, zero_indicator, knn, linreg };

struct ImputerOptions {
  ImputerKind kind = ImputerKind::mean_mode;
  std::size_t k = 5;
};

namespace detail {

inline MeanModeImputer fit_mean_mode(const Eigen::MatrixXd& x, const MaskMatrix& missing,
                                     std::span<const bool> categorical) {
  MeanModeImputer imp{Eigen::VectorXd(x.cols())};
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const bool cat = !categorical.empty() && categorical[static_cast<std::size_t>(j)];
    double sum = 0.0;
    std::size_t n = 0;
    std::map<double, std::size_t> counts;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (missing(i, j)) continue;
      ++n;
      if (cat) ++counts[x(i, j)];
      else sum += x(i, j);
    }
    if (n == 0) throw Error("feature " + std::to_string(j) + " is missing in every training row");
    if (cat) {
      // Ties resolve to the smallest code (map order, strict >).
      auto best = counts.begin();
      for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
      imp.fill(j) = best->first;
    } else {
      imp.fill(j) = sum / static_cast<double>(n);
    }
  }
  return imp;
}

}  // namespace detail

/// Fits an imputer on training rows with observed-missingness mask.
/// LinReg models that are rank deficient fall back to the mean with a
/// warning on `warn`.
inline Imputer fit_imputer(const ImputerOptions& opts, const Eigen::MatrixXd& x, const MaskMatrix& missing,
                           std::span<const bool> categorical = {}, std::ostream* warn = &std::clog) {
  if (x.rows() == 0) throw Error("cannot fit an imputer on an empty training set");
  if (missing.rows() != x.rows() || missing.cols() != x.cols()) throw Error("mask shape does not match training data");
  const auto d = x.cols();
  switch (opts.kind) {
    case ImputerKind::mean_mode: return detail::fit_mean_mode(x, missing, categorical);
    case ImputerKind::zero_indicator: return ZeroIndicatorImputer{static_cast<std::size_t>(d)};
    case ImputerKind::knn: {
      if (opts.k == 0) throw Error("KNN imputer needs k >= 1");
      return KnnImputer{opts.k, x, missing, detail::fit_mean_mode(x, missing, categorical).fill};
    }
    case ImputerKind::linreg: {
      auto means = detail::fit_mean_mode(x, missing, categorical).fill;
      std::vector<Eigen::Index> complete;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if ((missing.row(i) == 0).all()) complete.push_back(i);
      if (complete.size() < static_cast<std::size_t>(d))
        throw Error("linear-regression imputer needs at least d complete training rows");
      LinRegImputer imp;
      imp.fallback = means;
      const auto n = static_cast<Eigen::Index>(complete.size());
      for (Eigen::Index t = 0; t < d; ++t) {
        Eigen::MatrixXd A(n, d);  // intercept + the d-1 other features
        Eigen::VectorXd b(n);
        for (Eigen::Index r = 0; r < n; ++r) {
          const auto i = complete[static_cast<std::size_t>(r)];
          A(r, 0) = 1.0;
          Eigen::Index c = 1;
          for (Eigen::Index j = 0; j < d; ++j)
            if (j != t) A(r, c++) = x(i, j);
          b(r) = x(i, t);
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        LinRegImputer::Model m;
        m.coef = Eigen::VectorXd::Zero(d);
        if (qr.rank() < A.cols()) {
          m.fallback = true;
          if (warn) *warn << "warning: linear-regression imputer for feature " << t
                          << " is rank deficient; falling back to the mean\n";
        } else {
          Eigen::VectorXd sol = qr.solve(b);
          m.intercept = sol(0);
          Eigen::Index c = 1;
          for (Eigen::Index j = 0; j < d; ++j)
            if (j != t) m.coef(j) = sol(c++);
        }
        imp.models.push_back(std::move(m));
      }
      return imp;
    }
  }
  throw Error("unknown imputer kind");
}

inline std::size_t imputed_width(const Imputer& imp, std::size_t d) {
  return std::holds_alternative<ZeroIndicatorImputer>(imp) ? 2 * d : d;
}

namespace detail {

inline Eigen::VectorXd knn_fill(const KnnImputer& imp, const Eigen::Ref<const Eigen::VectorXd>& row, const Mask& missing) {
  Eigen::VectorXd out = row;
  const auto d = row.size();
  const auto n = imp.train.rows();
  // Distances do not depend on the target feature, only the candidate set.
  std::vector<double> dist(static_cast<std::size_t>(n), -1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    int shared = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (missing[static_cast<std::size_t>(j)] || imp.train_missing(i, j)) continue;
      const double diff = row(j) - imp.train(i, j);
      acc += diff * diff;
      ++shared;
    }
    if (shared > 0) dist[static_cast<std::size_t>(i)] = acc / shared;
  }
  std::vector<Eigen::Index> cand;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!missing[static_cast<std::size_t>(j)]) continue;
    cand.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (dist[static_cast<std::size_t>(i)] >= 0.0 && !imp.train_missing(i, j)) cand.push_back(i);
    if (cand.empty()) {
      out(j) = imp.fallback(j);
      continue;
    }
    const auto k = std::min(imp.k, cand.size());
    // Lowest row index wins distance ties.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
                        return da != db ? da < db : a < b;
                      });
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) sum += imp.train(cand[r], j);
    out(j) = sum / static_cast<double>(k);
  }
  return out;
}

}  // namespace detail

/// Completes a row. For ZeroIndicator the result is [filled row, mask].
inline Eigen::VectorXd impute(const Imputer& imp, const Eigen::Ref<const Eigen::VectorXd>& row, const Mask& missing) {
  const auto d = row.size();
  if (missing.size() != static_cast<std::size_t>(d)) throw Error("impute: mask length does not match row");
  return std::visit(
      [&](const auto& m) -> Eigen::VectorXd {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, MeanModeImputer>) {
          if (m.fill.size() != d) throw Error("impute: row length does not match imputer");
          Eigen::VectorXd out = row;
          for (Eigen::Index j = 0; j < d; ++j)
            if (missing[static_cast<std::size_t>(j)]) out(j) = m.fill(j);
          return out;
        } else if constexpr (std::is_same_v<M, ZeroIndicatorImputer>) {
          if (m.d != static_cast<std::size_t>(d)) throw Error("impute: row length does not match imputer");
          Eigen::VectorXd out(2 * d);
          for (Eigen::Index j = 0; j < d; ++j) {
            const bool miss = missing[static_cast<std::size_t>(j)];
            out(j) = miss ? 0.0 : row(j);
            out(d + j) = miss ? 1.0 : 0.0;
          }
          return out;
        } else if constexpr (std::is_same_v<M, KnnImputer>) {
          if (m.train.cols() != d) throw Error("impute: row length does not match imputer");
          if (missing.none()) return row;
          return detail::knn_fill(m, row, missing);
        } else {
          if (m.fallback.size() != d) throw Error("impute: row length does not match imputer");
          if (missing.none()) return row;
          // Predictors that are themselves missing enter at their mean.
          Eigen::VectorXd base = row;
          for (Eigen::Index j = 0; j < d; ++j)
            if (missing[static_cast<std::size_t>(j)]) base(j) = m.fallback(j);
          Eigen::VectorXd out = row;
          for (Eigen::Index t = 0; t < d; ++t) {
            if (!missing[static_cast<std::size_t>(t)]) continue;
            const auto& model = m.models[static_cast<std::size_t>(t)];
            out(t) = model.fallback ? m.fallback(t) : model.intercept + model.coef.dot(base);
          }
          return out;
        }
      },
      imp);
}

/// Row-wise impute over a matrix with a per-row mask.
inline Eigen::MatrixXd impute_rows(const Imputer& imp, const Eigen::MatrixXd& rows, const MaskMatrix& missing) {
  const auto d = static_cast<std::size_t>(rows.cols());
  Eigen::MatrixXd out(rows.rows(), static_cast<Eigen::Index>(imputed_width(imp, d)));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out.row(i) = impute(imp, rows.row(i).transpose(), row_mask(missing, i)).transpose();
  return out;
}

/// Input-level dropout: each entry independently set to 0 with probability
/// `rate`. With `rescale`, survivors are divided by (1 - rate).
inline Eigen::VectorXd dropout_augment(const Eigen::Ref<const Eigen::VectorXd>& row, double rate, Rng& rng,
                                       bool rescale = false) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("dropout rate must lie in [0, 1]");
  Eigen::VectorXd out = row;
  const double scale = rescale && rate < 1.0 ? 1.0 / (1.0 - rate) : 1.0;
  for (Eigen::Index j = 0; j < out.size(); ++j) out(j) = bernoulli(rng, rate) ? 0.0 : out(j) * scale;
  return out;
}

/// Knockout* placeholders: the policy with x̄ replaced by mean/mode values.
/// ẋ is kept, except where it would collide with the new x̄.
inline PlaceholderPolicy mean_mode_policy(const PlaceholderPolicy& base, const MeanModeImputer& imp) {
  if (static_cast<std::size_t>(imp.fill.size()) != base.dim()) throw Error("mean/mode fill does not match policy");
  PlaceholderPolicy p = base;
  p.knockout_values = imp.fill;
  for (Eigen::Index i = 0; i < p.observed_values.size(); ++i)
    if (p.observed_values(i) == p.knockout_values(i)) p.observed_values(i) = base.knockout_values(i);
  p.validate();
  return p;
}

}  // namespace knockout
