#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/mask.hpp"
#include "knockout/random.hpp"

// Exact enumeration oracles over finite joints p(X, Y). Feature values are
// integer codes 0..alphabet-1; kOutOfSupport stands for a placeholder that no
// feature value can equal.

namespace knockout {

using Rational = boost::multiprecision::cpp_rational;

inline constexpr int kOutOfSupport = -1;

template <class S>
inline constexpr bool is_exact_v = !std::is_floating_point_v<S>;

template <class S>
S make_ratio(long long num, long long den) {
  if constexpr (is_exact_v<S>) return S(num) / S(den);
  else return static_cast<S>(num) / static_cast<S>(den);
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }
inline double to_double(double v) { return v; }

template <class S>
struct JointEntry {
  std::vector<int> x;
  int y = 0;
  S p{};
};

template <class S>
class DiscreteJoint {
 public:
  DiscreteJoint() = default;
  DiscreteJoint(std::vector<int> alphabet, int n_labels, std::vector<JointEntry<S>> entries)
      : alphabet_(std::move(alphabet)), n_labels_(n_labels), entries_(std::move(entries)) {
    validate();
  }

  std::size_t dim() const { return alphabet_.size(); }
  const std::vector<int>& alphabet() const { return alphabet_; }
  int n_labels() const { return n_labels_; }
  const std::vector<JointEntry<S>>& entries() const { return entries_; }

  template <class T>
  DiscreteJoint<T> cast() const {
    std::vector<JointEntry<T>> out;
    for (const auto& e : entries_) {
      if constexpr (std::is_same_v<T, double>) out.push_back({e.x, e.y, to_double(e.p)});
      else out.push_back({e.x, e.y, T(e.p)});
    }
    return DiscreteJoint<T>(alphabet_, n_labels_, std::move(out));
  }

 private:
  void validate() const {
    if (alphabet_.empty()) throw Error("discrete joint needs at least one feature");
    for (int a : alphabet_)
      if (a < 1) throw Error("feature alphabets must be non-empty");
    if (n_labels_ < 1) throw Error("discrete joint needs at least one label");
    S total{0};
    std::map<std::pair<std::vector<int>, int>, int> seen;
    for (const auto& e : entries_) {
      if (e.x.size() != alphabet_.size()) throw Error("joint entry has wrong feature count");
      for (std::size_t i = 0; i < e.x.size(); ++i)
        if (e.x[i] < 0 || e.x[i] >= alphabet_[i]) throw Error("joint entry value outside its alphabet");
      if (e.y < 0 || e.y >= n_labels_) throw Error("joint entry label out of range");
      if (e.p < S{0}) throw Error("joint probabilities must be non-negative");
      if (seen[{e.x, e.y}]++) throw Error("duplicate joint entry");
      total += e.p;
    }
    if constexpr (is_exact_v<S>) {
      if (total != S{1}) throw Error("joint probabilities must sum to 1 exactly");
    } else {
      if (std::abs(total - 1.0) > 1e-12) throw Error("joint probabilities must sum to 1");
    }
  }

  std::vector<int> alphabet_;
  int n_labels_ = 0;
  std::vector<JointEntry<S>> entries_;
};

template <class S>
std::vector<S> normalize_or_throw(std::vector<S> v, const char* what) {
  S total{0};
  for (const auto& p : v) total += p;
  if (total == S{0}) throw UnreachableEvidence(what);
  for (auto& p : v) p /= total;
  return v;
}

/// p(Y | X_{-M} = x_{-M}) by summing the joint over the masked coordinates.
/// Masked positions of `x` are ignored.
template <class S>
std::vector<S> marginal_discrete(const DiscreteJoint<S>& joint, const Mask& pattern, const std::vector<int>& x) {
  if (pattern.size() != joint.dim() || x.size() != joint.dim()) throw Error("marginal_discrete: length mismatch");
  std::vector<S> out(static_cast<std::size_t>(joint.n_labels()), S{0});
  for (const auto& e : joint.entries()) {
    bool match = true;
    for (std::size_t i = 0; i < x.size() && match; ++i) match = pattern[i] || e.x[i] == x[i];
    if (match) out[static_cast<std::size_t>(e.y)] += e.p;
  }
  return normalize_or_throw(std::move(out), "marginal_discrete");
}

/// Push-forward of p(X, Y) through knockout with independent Bernoulli(q)
/// masks: the exact joint of (X', Y), stored by X' value.
template <class S>
class InducedJoint {
 public:
  InducedJoint(const DiscreteJoint<S>& joint, const S& q, std::vector<int> placeholder)
      : n_labels_(joint.n_labels()), placeholder_(std::move(placeholder)) {
    if (placeholder_.size() != joint.dim()) throw Error("placeholder length does not match joint");
    if (q < S{0} || q > S{1}) throw Error("knockout probability must lie in [0, 1]");
    const std::size_t d = joint.dim();
    const std::size_t n_masks = std::size_t{1} << d;
    for (std::size_t bits = 0; bits < n_masks; ++bits) {
      S w{1};
      for (std::size_t i = 0; i < d; ++i) w *= (bits >> i & 1) ? q : S{1} - q;
      if (w == S{0}) continue;
      for (const auto& e : joint.entries()) {
        if (e.p == S{0}) continue;
        std::vector<int> xp = e.x;
        for (std::size_t i = 0; i < d; ++i)
          if (bits >> i & 1) xp[i] = placeholder_[i];
        auto& row = table_[xp];
        if (row.empty()) row.assign(static_cast<std::size_t>(n_labels_), S{0});
        row[static_cast<std::size_t>(e.y)] += w * e.p;
      }
    }
  }

  /// p(Y | X' = evidence).
  std::vector<S> conditional(const std::vector<int>& evidence) const {
    auto it = table_.find(evidence);
    if (it == table_.end()) throw UnreachableEvidence("induced_conditional_discrete");
    return normalize_or_throw(it->second, "induced_conditional_discrete");
  }

  S evidence_probability(const std::vector<int>& evidence) const {
    auto it = table_.find(evidence);
    S total{0};
    if (it != table_.end())
      for (const auto& p : it->second) total += p;
    return total;
  }

  const std::map<std::vector<int>, std::vector<S>>& table() const { return table_; }
  const std::vector<int>& placeholder() const { return placeholder_; }

 private:
  int n_labels_;
  std::vector<int> placeholder_;
  std::map<std::vector<int>, std::vector<S>> table_;
};

/// p(Y | X' = evidence) under per-feature Bernoulli(q) knockout with the
/// given placeholder point (entries may be in support or kOutOfSupport).
template <class S>
std::vector<S> induced_conditional_discrete(const DiscreteJoint<S>& joint, const S& q, const std::vector<int>& placeholder,
                                            const std::vector<int>& evidence) {
  return InducedJoint<S>(joint, q, placeholder).conditional(evidence);
}

/// Closed-form distortion of an in-support placeholder for feature i:
///   (1 - r + r P(X_i = x̄_i | Y, x_{-i})) / (1 - r + r P(X_i = x̄_i | x_{-i}))
/// with r = P(M_i = 0) = 1 - q. Multiplying p(Y | x_{-i}) by this ratio gives
/// the induced conditional when every other placeholder is out of support.
/// Labels with p(Y, x_{-i}) = 0 get ratio 1 (their marginal mass is zero).
template <class S>
std::vector<S> insupport_deviation(const DiscreteJoint<S>& joint, const S& q, std::size_t i, int placeholder_value,
                                   const std::vector<int>& context) {
  if (i >= joint.dim() || context.size() != joint.dim()) throw Error("insupport_deviation: bad feature index or context");
  if (placeholder_value < 0 || placeholder_value >= joint.alphabet()[i])
    throw Error("insupport_deviation: placeholder must lie in the feature's support");
  const auto labels = static_cast<std::size_t>(joint.n_labels());
  std::vector<S> ctx_y(labels, S{0}), hit_y(labels, S{0});
  for (const auto& e : joint.entries()) {
    bool match = true;
    for (std::size_t j = 0; j < context.size() && match; ++j) match = j == i || e.x[j] == context[j];
    if (!match) continue;
    ctx_y[static_cast<std::size_t>(e.y)] += e.p;
    if (e.x[i] == placeholder_value) hit_y[static_cast<std::size_t>(e.y)] += e.p;
  }
  S ctx{0}, hit{0};
  for (std::size_t y = 0; y < labels; ++y) {
    ctx += ctx_y[y];
    hit += hit_y[y];
  }
  if (ctx == S{0}) throw UnreachableEvidence("insupport_deviation: context has zero probability");
  const S r = S{1} - q;
  const S den = S{1} - r + r * (hit / ctx);
  if (den == S{0}) throw UnreachableEvidence("insupport_deviation: zero denominator");
  std::vector<S> out(labels, S{1});
  for (std::size_t y = 0; y < labels; ++y)
    if (ctx_y[y] != S{0}) out[y] = (S{1} - r + r * (hit_y[y] / ctx_y[y])) / den;
  return out;
}

/// Two-point world: P(X = x1) = 0.3, Y = 0 exactly when X = x1. Code 0 is x1.
inline DiscreteJoint<Rational> two_point_deterministic_joint() {
  return DiscreteJoint<Rational>({2}, 2,
                                 {{{0}, 0, make_ratio<Rational>(3, 10)},
                                  {{0}, 1, Rational(0)},
                                  {{1}, 0, Rational(0)},
                                  {{1}, 1, make_ratio<Rational>(7, 10)}});
}

/// Random joint with d <= max_d features, alphabets <= max_alphabet and
/// labels <= max_labels. Integer weights 0..9 make some cells unreachable.
template <class S>
DiscreteJoint<S> random_joint(Rng& rng, std::size_t max_d = 3, int max_alphabet = 4, int max_labels = 3) {
  std::uniform_int_distribution<std::size_t> dd(1, max_d);
  std::uniform_int_distribution<int> ad(2, max_alphabet), ld(2, max_labels), wd(0, 9);
  const auto d = dd(rng);
  std::vector<int> alphabet(d);
  for (auto& a : alphabet) a = ad(rng);
  const int labels = ld(rng);
  std::vector<JointEntry<S>> entries;
  std::vector<long long> weights;
  long long total = 0;
  std::vector<int> x(d, 0);
  for (;;) {
    for (int y = 0; y < labels; ++y) {
      const long long w = wd(rng);
      entries.push_back({x, y, S{}});
      weights.push_back(w);
      total += w;
    }
    std::size_t k = 0;
    while (k < d && ++x[k] == alphabet[k]) x[k++] = 0;
    if (k == d) break;
  }
  if (total == 0) {
    weights.front() = 1;
    total = 1;
  }
  for (std::size_t k = 0; k < entries.size(); ++k) entries[k].p = make_ratio<S>(weights[k], total);
  return DiscreteJoint<S>(std::move(alphabet), labels, std::move(entries));
}

namespace detail {

inline Rational parse_exact(const std::string& tok) {
  auto slash = tok.find('/');
  auto to_int = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw Error("joint table: cannot parse probability '" + tok + "'");
    return boost::multiprecision::cpp_int(s);
  };
  if (slash != std::string::npos) {
    auto den = to_int(tok.substr(slash + 1));
    if (den == 0) throw Error("joint table: zero denominator in '" + tok + "'");
    return Rational(to_int(tok.substr(0, slash))) / Rational(den);
  }
  auto dot = tok.find('.');
  if (dot == std::string::npos) return Rational(to_int(tok));
  std::string whole = tok.substr(0, dot), frac = tok.substr(dot + 1);
  if (whole.empty()) whole = "0";
  boost::multiprecision::cpp_int den = 1;
  for (std::size_t k = 0; k < frac.size(); ++k) den *= 10;
  return Rational(to_int(whole)) + (frac.empty() ? Rational(0) : Rational(to_int(frac)) / Rational(den));
}

}  // namespace detail

/// Text table format:
///   # comment
///   alphabet 2 3        (alphabet size per feature)
///   labels 2
///   <x_1> ... <x_d> <y> <p>    one row per cell, p as "3/10" or "0.3"
/// Cells not listed have probability zero. Decimals are read exactly.
inline DiscreteJoint<Rational> parse_joint_table(std::istream& is) {
  std::vector<int> alphabet;
  int labels = 0;
  std::vector<JointEntry<Rational>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    if (head == "alphabet") {
      int a;
      while (ls >> a) alphabet.push_back(a);
      continue;
    }
    if (head == "labels") {
      ls >> labels;
      continue;
    }
    if (alphabet.empty() || labels == 0)
      throw Error("joint table line " + std::to_string(lineno) + ": 'alphabet' and 'labels' must precede rows");
    std::vector<std::string> toks{head};
    std::string t;
    while (ls >> t) toks.push_back(t);
    if (toks.size() != alphabet.size() + 2)
      throw Error("joint table line " + std::to_string(lineno) + ": expected " + std::to_string(alphabet.size() + 2) +
                  " fields");
    JointEntry<Rational> e;
    try {
      for (std::size_t i = 0; i < alphabet.size(); ++i) e.x.push_back(std::stoi(toks[i]));
      e.y = std::stoi(toks[alphabet.size()]);
    } catch (const std::logic_error&) {
      throw Error("joint table line " + std::to_string(lineno) + ": non-integer value or label");
    }
    e.p = detail::parse_exact(toks.back());
    entries.push_back(std::move(e));
  }
  return DiscreteJoint<Rational>(std::move(alphabet), labels, std::move(entries));
}

template <class S>
S total_variation(const std::vector<S>& p, const std::vector<S>& q) {
  if (p.size() != q.size()) throw Error("total_variation: size mismatch");
  S acc{0};
  for (std::size_t k = 0; k < p.size(); ++k) acc += p[k] > q[k] ? p[k] - q[k] : q[k] - p[k];
  return acc / S{2};
}

}  // namespace knockout
