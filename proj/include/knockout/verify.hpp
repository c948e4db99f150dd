#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "knockout/augment.hpp"
#include "knockout/discrete.hpp"
#include "knockout/missingness.hpp"
#include "knockout/nn.hpp"

// Exact and Monte Carlo identity checks behind `knockout verify`.

namespace knockout {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::vector<std::vector<int>> grid_points(const std::vector<int>& alphabet) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(alphabet.size(), 0);
  for (;;) {
    out.push_back(cur);
    std::size_t k = 0;
    while (k < cur.size() && ++cur[k] == alphabet[k]) cur[k++] = 0;
    if (k == cur.size()) break;
  }
  return out;
}

inline std::string str(const Rational& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline CheckResult timed(const std::string& name, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

/// P(X = x1) = 0.3, Y = 0 iff X = x1, knockout probability 1/2 with x̄ = x1:
/// P(Y = 0 | X' = x1) = 0.6/1.3.
inline CheckResult check_counterexample() {
  return detail::timed("counterexample", [](CheckResult& r) {
    const auto joint = two_point_deterministic_joint();
    const Rational half = Rational(1) / 2;
    const auto exact = induced_conditional_discrete<Rational>(joint, half, {0}, {0});
    const Rational expected = Rational(6) / 13;
    const auto approx = induced_conditional_discrete<double>(joint.cast<double>(), 0.5, {0}, {0});
    const auto ratio = insupport_deviation<Rational>(joint, half, 0, 0, {0});
    const bool ok_exact = exact[0] == expected;
    const bool ok_double = std::abs(approx[0] - 0.6 / 1.3) <= 1e-12;
    const bool ok_ratio = ratio[0] == Rational(20) / 13;
    r.passed = ok_exact && ok_double && ok_ratio;
    std::ostringstream os;
    os.precision(12);
    os << "P(Y=0|X'=x1) = " << detail::str(exact[0]) << " = " << approx[0] << " (expected 0.6/1.3), distortion "
       << detail::str(ratio[0]);
    r.detail = os.str();
  });
}

/// Out-of-support placeholders: the induced conditional equals the true
/// marginal for every pattern and every reachable evidence value.
inline CheckResult check_out_of_support(std::size_t n_joints = 200, std::uint64_t seed = 23) {
  return detail::timed("out_of_support", [&](CheckResult& r) {
    Rng rng(seed);
    std::size_t checked = 0, failures = 0;
    for (std::size_t t = 0; t < n_joints; ++t) {
      const auto joint = random_joint<Rational>(rng);
      const Rational q = Rational(static_cast<long long>(rng() % 9 + 1)) / 10;
      InducedJoint<Rational> induced(joint, q, std::vector<int>(joint.dim(), kOutOfSupport));
      for (const auto& [xp, mass] : induced.table()) {
        if (induced.evidence_probability(xp) == 0) continue;
        Mask m(joint.dim());
        for (std::size_t i = 0; i < joint.dim(); ++i) m.set(i, xp[i] == kOutOfSupport);
        if (induced.conditional(xp) != marginal_discrete(joint, m, xp)) ++failures;
        ++checked;
      }
    }
    r.passed = failures == 0 && checked > 0;
    r.detail = std::to_string(n_joints) + " joints, " + std::to_string(checked) + " evidence values, " +
               std::to_string(failures) + " mismatches";
  });
}

/// A rare in-support placeholder with P(X1 = x̄1) = ε: the total variation
/// between induced conditional and marginal shrinks with ε and stays below
/// (1 - q) ε / (q P(x2)).
inline CheckResult check_bound_trend() {
  return detail::timed("approximation_bound", [](CheckResult& r) {
    const Rational q = Rational(1) / 4;
    // Base weights over (x1 in {0,1}, x2 in {0,1}, y); x1 = 2 is the rare code.
    const int base[2][2][2] = {{{3, 1}, {1, 2}}, {{2, 2}, {1, 4}}};
    std::vector<Rational> tvs;
    std::ostringstream os;
    os.precision(3);
    bool bounded = true;
    double worst_c = 0.0;
    for (long long inv : {100LL, 10000LL, 1000000LL}) {
      const Rational eps = Rational(1) / inv;
      std::vector<JointEntry<Rational>> entries;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int y = 0; y < 2; ++y) entries.push_back({{a, b}, y, (1 - eps) * Rational(base[a][b][y]) / 16});
      // The rare value carries the opposite label to stress the bound.
      for (int b = 0; b < 2; ++b) {
        entries.push_back({{2, b}, 0, eps / 2});
        entries.push_back({{2, b}, 1, Rational(0)});
      }
      DiscreteJoint<Rational> joint({3, 2}, 2, entries);
      InducedJoint<Rational> induced(joint, q, {2, kOutOfSupport});
      Rational worst(0);
      for (int b = 0; b < 2; ++b) {
        const std::vector<int> ev{2, b};
        const auto marg = marginal_discrete(joint, Mask::from_string("10"), ev);
        const auto tv = total_variation(induced.conditional(ev), marg);
        Rational p_x2(0);
        for (const auto& e : joint.entries())
          if (e.x[1] == b) p_x2 += e.p;
        if (tv > (1 - q) * eps / (q * p_x2)) bounded = false;
        worst_c = std::max(worst_c, to_double(tv * q / eps));
        if (tv > worst) worst = tv;
      }
      tvs.push_back(worst);
      os << "eps=" << 1.0 / static_cast<double>(inv) << " tv=" << to_double(worst) << "; ";
    }
    const bool monotone = tvs[0] > tvs[1] && tvs[1] > tvs[2];
    r.passed = bounded && monotone;
    os << "C=" << worst_c << (monotone ? "" : " (not monotone)") << (bounded ? "" : " (bound exceeded)");
    r.detail = os.str();
  });
}

/// The closed-form distortion factor reproduces the induced conditional
/// exactly for an in-support placeholder on random joints.
inline CheckResult check_insupport_identity(std::size_t n_joints = 100, std::uint64_t seed = 29) {
  return detail::timed("insupport_identity", [&](CheckResult& r) {
    Rng rng(seed);
    std::size_t checked = 0, failures = 0;
    for (std::size_t t = 0; t < n_joints; ++t) {
      const auto joint = random_joint<Rational>(rng);
      const std::size_t i = rng() % joint.dim();
      const int xbar = static_cast<int>(rng() % static_cast<unsigned>(joint.alphabet()[i]));
      const Rational q = Rational(static_cast<long long>(rng() % 9 + 1)) / 10;
      std::vector<int> placeholder(joint.dim(), kOutOfSupport);
      placeholder[i] = xbar;
      InducedJoint<Rational> induced(joint, q, placeholder);
      Mask m(joint.dim());
      m.set(i);
      for (auto ctx : detail::grid_points(joint.alphabet())) {
        ctx[i] = xbar;
        if (induced.evidence_probability(ctx) == 0) continue;
        std::vector<Rational> marg;
        try {
          marg = marginal_discrete(joint, m, ctx);
        } catch (const UnreachableEvidence&) {
          continue;
        }
        const auto ratio = insupport_deviation(joint, q, i, xbar, ctx);
        const auto lhs = induced.conditional(ctx);
        for (std::size_t y = 0; y < lhs.size(); ++y)
          if (lhs[y] != marg[y] * ratio[y]) ++failures;
        ++checked;
      }
    }
    r.passed = failures == 0 && checked > 0;
    r.detail = std::to_string(checked) + " contexts, " + std::to_string(failures) + " mismatches";
  });
}

/// Expected knockout loss over masks equals the p(m)-weighted sum of the
/// per-pattern losses: Monte Carlo over `n_masks` draws vs exact enumeration.
inline CheckResult check_decomposition(std::size_t n_masks = 100000, std::uint64_t seed = 31) {
  return detail::timed("decomposition", [&](CheckResult& r) {
    constexpr std::size_t d = 2;
    const double rate = 0.3;
    Rng rng(seed);
    const Eigen::Index n = 64;
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = standard_normal(rng);
      x(i, 1) = 0.5 * x(i, 0) + standard_normal(rng);
      y(i) = x(i, 0) - 2.0 * x(i, 1) + 0.1 * standard_normal(rng);
    }
    PlaceholderPolicy policy{Eigen::VectorXd::Constant(d, 10.0), Eigen::VectorXd::Constant(d, -10.0)};
    const auto spec = NetworkSpec::mlp(d, {8}, 1, Head::linear);
    const auto params = init_parameters(spec, rng);

    auto knocked = [&](const Mask& m) {
      Eigen::MatrixXd out(n, d);
      for (Eigen::Index i = 0; i < n; ++i) out.row(i) = apply_knockout(x.row(i).transpose(), m, policy).transpose();
      return out;
    };
    std::vector<Eigen::VectorXd> row_losses;
    double exact = 0.0;
    for (std::size_t bits = 0; bits < (std::size_t{1} << d); ++bits) {
      Mask m(d);
      double pm = 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        m.set(i, bits >> i & 1);
        pm *= m[i] ? rate : 1.0 - rate;
      }
      const Eigen::VectorXd err = forward(spec, params, knocked(m)).col(0) - y;
      row_losses.push_back(err.array().square().matrix());
      exact += pm * row_losses.back().mean();
    }

    const auto dist = MaskDistribution::iid(d, rate);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t k = 0; k < n_masks; ++k) {
      const auto m = sample_mask(dist, rng);
      const auto i = pick(rng);
      const Eigen::MatrixXd row = apply_knockout(x.row(i).transpose(), m, policy).transpose();
      const double e = forward(spec, params, row)(0, 0) - y(i);
      sum += e * e;
      sum_sq += e * e * e * e;
    }
    const double nm = static_cast<double>(n_masks);
    const double mc = sum / nm;
    const double se = std::sqrt(std::max(0.0, sum_sq / nm - mc * mc) / (nm - 1.0));
    r.passed = std::abs(mc - exact) <= 3.0 * se;
    std::ostringstream os;
    os.precision(6);
    os << "Monte Carlo " << mc << " vs exact " << exact << ", |diff| = " << std::abs(mc - exact) / se << " SE";
    r.detail = os.str();
  });
}

inline CheckResult check_calibration() {
  return detail::timed("rate_calibration", [](CheckResult& r) {
    const double r9 = calibrate_rate(9, 0.5);
    const double back = std::pow(1.0 - r9, 9.0);
    r.passed = std::abs(r9 - 0.0741) <= 5e-4 && std::abs(back - 0.5) <= 1e-12;
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << "rate(d=9, p_clean=0.5) = " << r9;
    r.detail = os.str();
  });
}

inline CheckResult check_pattern_counts() {
  return detail::timed("pattern_counts", [](CheckResult& r) {
    const auto a = enumerate_patterns(9, 3).size();
    const auto b = enumerate_patterns(3, 3).size();
    const auto c = enumerate_patterns(9, 1).size();
    r.passed = a == 130 && b == 8 && c == 10;
    r.detail = "(9,3) -> " + std::to_string(a) + ", (3,3) -> " + std::to_string(b) + ", (9,1) -> " + std::to_string(c);
  });
}

/// Analytic gradients vs central differences on random small networks.
inline CheckResult check_gradients(std::size_t n_configs = 20, std::uint64_t seed = 5) {
  return detail::timed("gradients", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < n_configs; ++t) {
      const bool ce = t % 2 == 1;
      const auto in = 1 + rng() % 4, out = ce ? 2 + rng() % 2 : 1 + rng() % 2;
      std::vector<std::size_t> hidden;
      for (std::size_t h = 0, nh = 1 + rng() % 2; h < nh; ++h) hidden.push_back(2 + rng() % 5);
      const auto spec = NetworkSpec::mlp(in, hidden, out, ce ? Head::logits : Head::linear);
      auto p = init_parameters(spec, rng);
      for (auto& l : p.layers)
        for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = 0.1 * standard_normal(rng);
      Eigen::MatrixXd x(5, static_cast<Eigen::Index>(in));
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = standard_normal(rng);
      Eigen::MatrixXd y(5, ce ? 1 : static_cast<Eigen::Index>(out));
      for (Eigen::Index k = 0; k < y.size(); ++k)
        y.data()[k] = ce ? static_cast<double>(rng() % out) : standard_normal(rng);
      const auto kind = ce ? LossKind::cross_entropy : LossKind::mse;
      const auto g = grad(spec, p, x, y, kind);
      for (std::size_t k = 0; k < p.size(); ++k) {
        Parameters plus = p, minus = p;
        plus[k] += 1e-5;
        minus[k] -= 1e-5;
        const double fd = (batch_loss(spec, plus, x, y, kind) - batch_loss(spec, minus, x, y, kind)) / 2e-5;
        worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-6}));
      }
    }
    r.passed = worst < 1e-4;
    std::ostringstream os;
    os << n_configs << " configurations, max relative error " << worst;
    r.detail = os.str();
  });
}

inline std::vector<CheckResult> run_verify_suite() {
  return {check_counterexample(), check_out_of_support(), check_bound_trend(),   check_insupport_identity(),
          check_decomposition(),  check_calibration(),    check_pattern_counts(), check_gradients()};
}

inline void print_check(std::ostream& os, const CheckResult& r) {
  char secs[32];
  std::snprintf(secs, sizeof(secs), "%.2fs", r.seconds);
  os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " [" << secs << "]\n";
}

/// Prints one line per check; returns 0 when all pass.
inline int cmd_verify(std::ostream& os) {
  int failed = 0;
  for (const auto& r : run_verify_suite()) {
    print_check(os, r);
    failed += !r.passed;
  }
  if (failed) os << failed << " check(s) failed\n";
  return failed ? 1 : 0;
}

}  // namespace knockout
