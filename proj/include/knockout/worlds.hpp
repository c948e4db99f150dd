#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "knockout/dataset.hpp"
#include "knockout/error.hpp"
#include "knockout/random.hpp"

namespace knockout {

inline constexpr double kCovarianceJitter = 1e-9;

/// Joint Gaussian over (X, Y): the first dim-1 coordinates are X, the last
/// is Y.
struct GaussianWorld {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index x_dim() const { return mean.size() - 1; }

  void validate() const {
    if (mean.size() < 2) throw Error("gaussian world needs at least one input and the target");
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
      throw Error("covariance shape does not match mean");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw Error("covariance is not symmetric");
  }
};

/// μ ~ U(0,1)^dim, W ~ U(0,1)^{dim x dim}, Σ = WᵀW.
inline GaussianWorld sample_gaussian_world(Rng& rng, Eigen::Index dim = 10) {
  GaussianWorld w{Eigen::VectorXd(dim), Eigen::MatrixXd(dim, dim)};
  for (Eigen::Index i = 0; i < dim; ++i) w.mean(i) = uniform01(rng);
  Eigen::MatrixXd W(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) W(i, j) = uniform01(rng);
  w.covariance.noalias() = W.transpose() * W;
  // Make exact symmetry explicit; the product is symmetric up to rounding.
  w.covariance = 0.5 * (w.covariance + w.covariance.transpose()).eval();
  return w;
}

inline Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov + kCovarianceJitter * Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  if (llt.info() != Eigen::Success) throw Error("covariance factorization failed after jitter");
  return llt.matrixL();
}

/// n i.i.d. rows: L z + μ with L the jittered Cholesky factor.
inline Dataset draw_dataset(const GaussianWorld& world, Eigen::Index n, Rng& rng) {
  world.validate();
  const Eigen::MatrixXd L = jittered_cholesky(world.covariance);
  const auto dim = world.dim();
  Dataset out{Eigen::MatrixXd(n, dim - 1), Eigen::VectorXd(n)};
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < dim; ++k) z(k) = standard_normal(rng);
    Eigen::VectorXd v = world.mean + L * z;
    out.x.row(i) = v.head(dim - 1).transpose();
    out.y(i) = v(dim - 1);
  }
  return out;
}

/// E[Y | X_S = x_S] = μ_Y + Σ_{Y,S} Σ_{SS}^{-1} (x_S − μ_S), with the
/// regression coefficients solved once for a fixed observed set S.
class GaussianConditional {
 public:
  GaussianConditional(const GaussianWorld& world, std::vector<Eigen::Index> observed)
      : observed_(std::move(observed)), mu_y_(world.mean(world.dim() - 1)) {
    world.validate();
    const auto y = world.dim() - 1;
    const auto s = static_cast<Eigen::Index>(observed_.size());
    mu_s_.resize(s);
    beta_.resize(s);
    if (s == 0) return;
    Eigen::MatrixXd sss(s, s);
    Eigen::VectorXd sys(s);
    for (Eigen::Index a = 0; a < s; ++a) {
      const auto ia = observed_[static_cast<std::size_t>(a)];
      if (ia < 0 || ia >= y) throw Error("observed index out of range for gaussian world");
      mu_s_(a) = world.mean(ia);
      sys(a) = world.covariance(y, ia);
      for (Eigen::Index b = 0; b < s; ++b) sss(a, b) = world.covariance(ia, observed_[static_cast<std::size_t>(b)]);
    }
    sss += kCovarianceJitter * Eigen::MatrixXd::Identity(s, s);
    Eigen::LLT<Eigen::MatrixXd> llt(sss);
    if (llt.info() != Eigen::Success) {
      std::string names;
      for (auto i : observed_) names += (names.empty() ? "" : ",") + std::to_string(i);
      throw Error("singular covariance block for observed set {" + names + "}");
    }
    beta_ = llt.solve(sys);
  }

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x_full) const {
    double v = mu_y_;
    for (Eigen::Index a = 0; a < beta_.size(); ++a) v += beta_(a) * (x_full(observed_[static_cast<std::size_t>(a)]) - mu_s_(a));
    return v;
  }

  /// Predictions for complete rows of X; only the observed columns are read.
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(x.rows(), mu_y_);
    for (Eigen::Index a = 0; a < beta_.size(); ++a)
      out.array() += beta_(a) * (x.col(observed_[static_cast<std::size_t>(a)]).array() - mu_s_(a));
    return out;
  }

  const Eigen::VectorXd& coefficients() const { return beta_; }

 private:
  std::vector<Eigen::Index> observed_;
  double mu_y_;
  Eigen::VectorXd mu_s_, beta_;
};

inline double bayes_conditional_mean(const GaussianWorld& world, const std::vector<Eigen::Index>& observed,
                                     const Eigen::Ref<const Eigen::VectorXd>& x_full) {
  return GaussianConditional(world, observed)(x_full);
}

inline nlohmann::json world_to_json(const GaussianWorld& w) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(w.mean.begin(), w.mean.end());
  j["covariance"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < w.covariance.rows(); ++r)
    j["covariance"].push_back(std::vector<double>(w.covariance.row(r).begin(), w.covariance.row(r).end()));
  return j;
}

inline GaussianWorld world_from_json(const nlohmann::json& j) {
  auto mean = j.at("mean").get<std::vector<double>>();
  GaussianWorld w{Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                  Eigen::MatrixXd(static_cast<Eigen::Index>(mean.size()), static_cast<Eigen::Index>(mean.size()))};
  const auto& cov = j.at("covariance");
  if (cov.size() != mean.size()) throw Error("serialized covariance has the wrong shape");
  for (std::size_t r = 0; r < mean.size(); ++r) {
    auto row = cov[r].get<std::vector<double>>();
    if (row.size() != mean.size()) throw Error("serialized covariance has the wrong shape");
    for (std::size_t c = 0; c < row.size(); ++c) w.covariance(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  w.validate();
  return w;
}

// Binary classification worlds.

enum class ClassWorldKind { continuous2d, mixed };

/// Class-conditional law of (X1, X2) given Y = c. In the continuous world X
/// is Gaussian with independent coordinates; in the mixed world X1 is a
/// category code in {1, 2} with P(X1 = 2 | Y = c) = p_x1, and X2 is Gaussian.
struct ClassConditional {
  Eigen::Vector2d mean{0.0, 0.0};
  Eigen::Vector2d stddev{1.0, 1.0};
  double p_x1 = 0.5;
};

struct MixedClassWorld {
  ClassWorldKind kind = ClassWorldKind::continuous2d;
  double prior1 = 0.5;
  ClassConditional class0, class1;

  /// Concentric classes: Y = 0 ~ N(0, I), Y = 1 ~ N(0, 9 I). Both single
  /// feature marginals stay informative, and mean imputation of one feature
  /// shifts the full-input decision radius away from the marginal optimum.
  static MixedClassWorld continuous2d() {
    MixedClassWorld w;
    w.kind = ClassWorldKind::continuous2d;
    w.class0.stddev = {1.0, 1.0};
    w.class1.stddev = {3.0, 3.0};
    return w;
  }

  /// Means (-1,-1) vs (+1,+1) with unit variance.
  static MixedClassWorld separated_gaussians(double distance_scale = 1.0) {
    MixedClassWorld w;
    w.kind = ClassWorldKind::continuous2d;
    w.class0.mean = {-distance_scale, -distance_scale};
    w.class1.mean = {distance_scale, distance_scale};
    return w;
  }

  /// P(X1 = 2 | Y = 1) = 0.8, P(X1 = 2 | Y = 0) = 0.2, X2 | Y ~ N(∓1, 1).
  static MixedClassWorld mixed() {
    MixedClassWorld w;
    w.kind = ClassWorldKind::mixed;
    w.class0.p_x1 = 0.2;
    w.class1.p_x1 = 0.8;
    w.class0.mean = {0.0, -1.0};
    w.class1.mean = {0.0, 1.0};
    return w;
  }

  void validate() const {
    if (!(prior1 > 0.0 && prior1 < 1.0)) throw Error("class prior must lie in (0, 1)");
    for (const auto* c : {&class0, &class1}) {
      if (!(c->stddev.minCoeff() > 0.0)) throw Error("class-conditional standard deviations must be positive");
      if (!(c->p_x1 >= 0.0 && c->p_x1 <= 1.0)) throw Error("class-conditional Bernoulli parameter out of range");
    }
  }

  /// Class-conditional density (or mass x density) of feature j at v.
  double feature_likelihood(int y, int j, double v) const {
    const auto& c = y ? class1 : class0;
    if (kind == ClassWorldKind::mixed && j == 0) {
      if (v == 2.0) return c.p_x1;
      if (v == 1.0) return 1.0 - c.p_x1;
      return 0.0;
    }
    const double z = (v - c.mean(j)) / c.stddev(j);
    return std::exp(-0.5 * z * z) / (c.stddev(j) * std::sqrt(2.0 * M_PI));
  }

  /// P(Y = 1 | X = x).
  double posterior1(double x1, double x2) const {
    const double a = prior1 * feature_likelihood(1, 0, x1) * feature_likelihood(1, 1, x2);
    const double b = (1.0 - prior1) * feature_likelihood(0, 0, x1) * feature_likelihood(0, 1, x2);
    return a / (a + b);
  }

  /// P(Y = 1 | X_j = v), the single-feature marginal.
  double marginal_posterior1(int j, double v) const {
    const double a = prior1 * feature_likelihood(1, j, v);
    const double b = (1.0 - prior1) * feature_likelihood(0, j, v);
    return a / (a + b);
  }
};

inline Dataset generate_mixed_classification(const MixedClassWorld& world, Eigen::Index n, Rng& rng) {
  world.validate();
  Dataset out{Eigen::MatrixXd(n, 2), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = bernoulli(rng, world.prior1) ? 1 : 0;
    const auto& c = y ? world.class1 : world.class0;
    if (world.kind == ClassWorldKind::mixed) out.x(i, 0) = bernoulli(rng, c.p_x1) ? 2.0 : 1.0;
    else out.x(i, 0) = c.mean(0) + c.stddev(0) * standard_normal(rng);
    out.x(i, 1) = c.mean(1) + c.stddev(1) * standard_normal(rng);
    out.y(i) = y;
  }
  return out;
}

/// Empirical P(Y = 1 | X_j) as a histogram (continuous) or per-value table
/// (discrete).
struct ConditionalEstimate {
  bool discrete = false;
  double lo = 0.0, hi = 0.0;           // histogram range
  std::vector<double> values;          // discrete support or bin centers
  std::vector<std::size_t> counts;     // rows per cell
  std::vector<std::size_t> positives;  // rows with Y = 1 per cell
  std::vector<double> estimate;        // smoothed (c+1)/(n+2) or raw c/n

  std::size_t cells() const { return values.size(); }

  std::optional<std::size_t> cell_of(double v) const {
    if (discrete) {
      for (std::size_t k = 0; k < values.size(); ++k)
        if (values[k] == v) return k;
      return std::nullopt;
    }
    if (v < lo || v > hi) return std::nullopt;
    const auto bins = values.size();
    auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(k, bins - 1);
  }
};

/// Equal-width histogram of P(Y = 1 | X_j) over the observed range, with
/// Laplace smoothing (+1/+2) unless disabled; discrete features use one cell
/// per distinct value.
inline ConditionalEstimate empirical_conditional(const Dataset& data, Eigen::Index feature, std::size_t bins = 50,
                                                 bool smoothing = true, bool discrete = false) {
  if (feature < 0 || feature >= data.dim()) throw Error("conditioning feature out of range");
  if (data.rows() == 0) throw Error("empirical_conditional: empty dataset");
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    if (data.y(i) != 0.0 && data.y(i) != 1.0) throw Error("empirical_conditional needs binary labels");
  ConditionalEstimate est;
  est.discrete = discrete;
  const auto col = data.x.col(feature);
  if (discrete) {
    std::vector<double> vals(col.begin(), col.end());
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    est.values = vals;
  } else {
    if (bins == 0) throw Error("histogram needs at least one bin");
    est.lo = col.minCoeff();
    est.hi = col.maxCoeff();
    if (!(est.hi > est.lo)) throw Error("conditioning feature is constant");
    for (std::size_t k = 0; k < bins; ++k)
      est.values.push_back(est.lo + (static_cast<double>(k) + 0.5) * (est.hi - est.lo) / static_cast<double>(bins));
  }
  est.counts.assign(est.values.size(), 0);
  est.positives.assign(est.values.size(), 0);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto k = *est.cell_of(col(i));
    ++est.counts[k];
    if (data.y(i) == 1.0) ++est.positives[k];
  }
  for (std::size_t k = 0; k < est.values.size(); ++k) {
    const auto c = static_cast<double>(est.positives[k]), n = static_cast<double>(est.counts[k]);
    if (smoothing) {
      est.estimate.push_back((c + 1.0) / (n + 2.0));
    } else {
      if (est.counts[k] == 0) throw Error("empty histogram bin " + std::to_string(k) + " with smoothing disabled");
      est.estimate.push_back(c / n);
    }
  }
  return est;
}

}  // namespace knockout
