#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "knockout/dataset.hpp"
#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/random.hpp"

namespace knockout {

/// Each of d features knocked out independently with probability `rate`.
struct IidMasks {
  std::size_t d = 0;
  double rate = 0.0;
};

/// All members of a group share one Bernoulli(rate) draw.
struct GroupedMasks {
  std::size_t d = 0;
  std::vector<std::vector<std::size_t>> groups;
  double rate = 0.0;
};

/// Explicit pattern law.
struct WeightedMasks {
  std::vector<Mask> patterns;
  std::vector<double> probabilities;
};

/// The law p(M) of the induced mask. Sampling takes no data argument, so
/// M is independent of X and Y by construction.
class MaskDistribution {
 public:
  using Law = std::variant<IidMasks, GroupedMasks, WeightedMasks>;

  static MaskDistribution iid(std::size_t d, double rate) {
    check_rate(rate);
    return MaskDistribution(IidMasks{d, rate});
  }

  static MaskDistribution grouped(std::size_t d, std::vector<std::vector<std::size_t>> groups, double rate) {
    check_rate(rate);
    std::vector<int> seen(d, 0);
    for (const auto& g : groups)
      for (auto i : g) {
        if (i >= d) throw Error("group member index out of range");
        if (seen[i]++) throw Error("mask groups overlap");
      }
    return MaskDistribution(GroupedMasks{d, std::move(groups), rate});
  }

  /// Probabilities summing to within 1e-6 of one are renormalized.
  static MaskDistribution weighted(std::vector<Mask> patterns, std::vector<double> probabilities) {
    if (patterns.empty() || patterns.size() != probabilities.size())
      throw Error("weighted mask law needs one probability per pattern");
    const auto d = patterns.front().size();
    double total = 0.0;
    for (std::size_t k = 0; k < patterns.size(); ++k) {
      if (patterns[k].size() != d) throw Error("weighted mask patterns differ in length");
      if (!(probabilities[k] >= 0.0)) throw Error("weighted mask probabilities must be non-negative");
      total += probabilities[k];
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error("weighted mask probabilities must sum to 1");
    for (auto& p : probabilities) p /= total;
    return MaskDistribution(WeightedMasks{std::move(patterns), std::move(probabilities)});
  }

  const Law& law() const { return law_; }

  std::size_t dim() const {
    return std::visit(
        [](const auto& l) -> std::size_t {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, WeightedMasks>) return l.patterns.front().size();
          else return l.d;
        },
        law_);
  }

 private:
  explicit MaskDistribution(Law law) : law_(std::move(law)) {}
  static void check_rate(double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error("knockout rate must lie in [0, 1]");
  }
  Law law_;
};

inline Mask sample_mask(const MaskDistribution& dist, Rng& rng) {
  return std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, IidMasks>) {
          Mask m(l.d);
          for (std::size_t i = 0; i < l.d; ++i) m.set(i, bernoulli(rng, l.rate));
          return m;
        } else if constexpr (std::is_same_v<L, GroupedMasks>) {
          Mask m(l.d);
          for (const auto& g : l.groups) {
            const bool knocked = bernoulli(rng, l.rate);
            for (auto i : g) m.set(i, knocked);
          }
          return m;
        } else {
          const double u = uniform01(rng);
          double acc = 0.0;
          for (std::size_t k = 0; k < l.patterns.size(); ++k) {
            acc += l.probabilities[k];
            if (u < acc) return l.patterns[k];
          }
          // u landed in the rounding slack above the last cumulative sum.
          for (std::size_t k = l.patterns.size(); k-- > 0;)
            if (l.probabilities[k] > 0.0) return l.patterns[k];
          return l.patterns.back();
        }
      },
      dist.law());
}

/// Rate r with (1 - r)^d = p_clean, the probability that no feature is
/// knocked out.
inline double calibrate_rate(std::size_t d, double p_clean) {
  if (d == 0) throw Error("calibrate_rate: d must be at least 1");
  if (!(p_clean > 0.0 && p_clean < 1.0)) throw Error("calibrate_rate: p_clean must lie in (0, 1)");
  return 1.0 - std::pow(p_clean, 1.0 / static_cast<double>(d));
}

struct Mcar {
  double p = 0.1;
};
struct MnarSelfCensor {
  double q = 0.9;
};
using MissingnessMechanism = std::variant<Mcar, MnarSelfCensor>;

inline ObservedDataset inject_mcar(const Dataset& data, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("MCAR probability must lie in [0, 1]");
  ObservedDataset out{data, MaskMatrix(data.x.rows(), data.x.cols())};
  for (Eigen::Index i = 0; i < data.x.rows(); ++i)
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) out.missing(i, j) = bernoulli(rng, p) ? 1 : 0;
  return out;
}

/// Nearest-rank empirical quantile: the value at 1-based rank ceil(q n) of
/// the sorted sample (rank clamped to [1, n]).
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  // The 1e-9 slack keeps products like 0.9 * 100 on their intended integer.
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

/// Self-censoring MNAR: entry (i, j) goes missing iff it is strictly above
/// the column's nearest-rank q-quantile. Columns flagged non-continuous are
/// left untouched. Deterministic.
inline ObservedDataset inject_mnar_self_censor(const Dataset& data, double q, std::span<const bool> continuous = {}) {
  if (!(q > 0.0 && q < 1.0)) throw Error("self-censoring quantile must lie in (0, 1)");
  if (!continuous.empty() && continuous.size() != static_cast<std::size_t>(data.x.cols()))
    throw Error("continuous-column flags do not match dataset width");
  ObservedDataset out{data, MaskMatrix::Zero(data.x.rows(), data.x.cols())};
  if (data.x.rows() == 0) return out;
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
    if (!continuous.empty() && !continuous[static_cast<std::size_t>(j)]) continue;
    std::vector<double> col(data.x.col(j).begin(), data.x.col(j).end());
    const double cut = nearest_rank_quantile(col, q);
    for (Eigen::Index i = 0; i < data.x.rows(); ++i) out.missing(i, j) = data.x(i, j) > cut ? 1 : 0;
  }
  return out;
}

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// All masks of length d with popcount <= k_max, ordered by popcount then
/// bit string.
inline std::vector<Mask> enumerate_patterns(std::size_t d, std::size_t k_max) {
  if (k_max > d) throw Error("enumerate_patterns: k_max exceeds d");
  std::vector<Mask> out;
  for (std::size_t k = 0; k <= k_max; ++k) {
    // Bit strings with k ones in increasing lexicographic order: start with
    // the ones packed at the end, then step through next_permutation.
    std::vector<std::uint8_t> bits(d, 0);
    std::fill(bits.end() - static_cast<std::ptrdiff_t>(k), bits.end(), 1);
    do {
      out.emplace_back(bits);
    } while (std::next_permutation(bits.begin(), bits.end()));
  }
  return out;
}

}  // namespace knockout
