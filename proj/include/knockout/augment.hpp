#pragma once

#include <Eigen/Core>

#include <iostream>
#include <optional>
#include <span>

#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/schema.hpp"

namespace knockout {

/// X'(M, X) = M ⊙ x̄ + (1 - M) ⊙ X, elementwise.
inline Eigen::VectorXd apply_knockout(const Eigen::Ref<const Eigen::VectorXd>& x, const Mask& m,
                                      const PlaceholderPolicy& policy) {
  if (static_cast<std::size_t>(x.size()) != m.size() || m.size() != policy.dim())
    throw Error("apply_knockout: length mismatch");
  Eigen::VectorXd out = x;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out(static_cast<Eigen::Index>(i)) = policy.knockout_values(static_cast<Eigen::Index>(i));
  return out;
}

/// Extends a mask so that any partially knocked structured group is knocked
/// as a whole.
inline Mask close_over_groups(const Mask& m, const FeatureSchema& schema) {
  if (m.size() != schema.dim()) throw Error("mask length does not match schema");
  Mask out = m;
  for (const auto& g : schema.groups()) {
    bool any = false;
    for (auto i : g) any = any || m[i];
    if (any)
      for (auto i : g) out.set(i);
  }
  return out;
}

inline Eigen::VectorXd apply_knockout(const Eigen::Ref<const Eigen::VectorXd>& x, const Mask& m,
                                      const PlaceholderPolicy& policy, const FeatureSchema& schema) {
  return apply_knockout(x, close_over_groups(m, schema), policy);
}

enum class ObservedMode { mcar, mnar };

/// Combines observed missingness N with the induced mask M.
///   mcar: M' = N ∨ M, every masked entry takes x̄.
///   mnar: M_i = 1 takes x̄_i (knockout wins), else N_i = 1 takes ẋ_i.
/// A mode is required whenever N has a set bit.
inline Eigen::VectorXd merge_observed(const Eigen::Ref<const Eigen::VectorXd>& x, const Mask& observed,
                                      const Mask& induced, std::optional<ObservedMode> mode,
                                      const PlaceholderPolicy& policy) {
  const auto d = static_cast<std::size_t>(x.size());
  if (observed.size() != d || induced.size() != d || policy.dim() != d) throw Error("merge_observed: length mismatch");
  if (!mode && !observed.none()) throw Error("merge_observed: observed missingness present but no mode given");
  Eigen::VectorXd out = x;
  for (std::size_t i = 0; i < d; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (induced[i]) {
      out(k) = policy.knockout_values(k);
    } else if (observed[i]) {
      out(k) = *mode == ObservedMode::mcar ? policy.knockout_values(k) : policy.observed_values(k);
    }
  }
  return out;
}

/// In-place row variant used by the trainers.
template <class Row>
void merge_observed_inplace(Row&& row, std::span<const std::uint8_t> observed, const Mask& induced, ObservedMode mode,
                            const PlaceholderPolicy& policy) {
  for (std::size_t i = 0; i < induced.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (induced[i]) row(k) = policy.knockout_values(k);
    else if (observed[i]) row(k) = mode == ObservedMode::mcar ? policy.knockout_values(k) : policy.observed_values(k);
  }
}

/// Missingness tag of a test entry, known a priori by the caller.
enum class MissingTag : std::uint8_t { observed, mcar, mnar, untagged };

/// Inference-time fill: MCAR-missing entries take x̄, MNAR-missing take ẋ.
/// Untagged missing entries fall back to x̄ and emit one warning per call.
inline Eigen::VectorXd fill_for_inference(const Eigen::Ref<const Eigen::VectorXd>& x, std::span<const MissingTag> tags,
                                          const PlaceholderPolicy& policy, std::ostream* warn = &std::clog) {
  if (tags.size() != static_cast<std::size_t>(x.size()) || policy.dim() != tags.size())
    throw Error("fill_for_inference: length mismatch");
  Eigen::VectorXd out = x;
  bool warned = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    switch (tags[i]) {
      case MissingTag::observed: break;
      case MissingTag::mnar: out(k) = policy.observed_values(k); break;
      case MissingTag::untagged:
        if (warn && !warned) {
          *warn << "warning: untagged missing entry at feature " << i << " treated as MCAR\n";
          warned = true;
        }
        [[fallthrough]];
      case MissingTag::mcar: out(k) = policy.knockout_values(k); break;
    }
  }
  return out;
}

}  // namespace knockout
