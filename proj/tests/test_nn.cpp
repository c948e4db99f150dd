#include <gtest/gtest.h>

#include <cmath>

#include "knockout/nn.hpp"

using namespace knockout;

namespace {

// Straightforward scalar re-implementation of the forward pass.
Eigen::MatrixXd naive_forward(const Parameters& p, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), p.layers.back().weights.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> a;
    for (Eigen::Index c = 0; c < x.cols(); ++c) a.push_back(x(r, c));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& W = p.layers[l].weights;
      std::vector<double> next(static_cast<std::size_t>(W.rows()));
      for (Eigen::Index o = 0; o < W.rows(); ++o) {
        double s = p.layers[l].bias(o);
        for (Eigen::Index i = 0; i < W.cols(); ++i) s += W(o, i) * a[static_cast<std::size_t>(i)];
        next[static_cast<std::size_t>(o)] = (l + 1 < p.layers.size() && s < 0) ? 0.0 : s;
      }
      a = std::move(next);
    }
    for (std::size_t k = 0; k < a.size(); ++k) out(r, static_cast<Eigen::Index>(k)) = a[k];
  }
  return out;
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = standard_normal(rng);
  return m;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZero) {
  auto spec = NetworkSpec::mlp(3, {4}, 2, Head::linear);
  Rng rng(1);
  EXPECT_EQ(forward(spec, zero_parameters(spec), random_matrix(rng, 5, 3)), Eigen::MatrixXd::Zero(5, 2));
}

TEST(Forward, IdentityLayer) {
  auto spec = NetworkSpec::mlp(3, {}, 3, Head::linear);
  auto p = zero_parameters(spec);
  p.layers[0].weights.setIdentity();
  Rng rng(2);
  auto x = random_matrix(rng, 4, 3);
  EXPECT_EQ(forward(spec, p, x), x);
}

TEST(Forward, MatchesNaiveImplementation) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    auto spec = NetworkSpec::mlp(1 + rng() % 5, {1 + rng() % 6, 1 + rng() % 6}, 1 + rng() % 3, Head::linear);
    auto p = init_parameters(spec, rng);
    for (auto& l : p.layers)
      for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = standard_normal(rng);
    auto x = random_matrix(rng, 7, static_cast<Eigen::Index>(spec.input_width()));
    EXPECT_LT((forward(spec, p, x) - naive_forward(p, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, RejectsBadInput) {
  auto spec = NetworkSpec::mlp(2, {3}, 1, Head::linear);
  auto p = zero_parameters(spec);
  EXPECT_THROW(forward(spec, p, Eigen::MatrixXd::Zero(2, 3)), Error);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(1, 2);
  bad(0, 1) = std::nan("");
  EXPECT_THROW(forward(spec, p, bad), Error);
}

TEST(Grad, SingleLinearUnit) {
  auto spec = NetworkSpec::mlp(1, {}, 1, Head::linear);
  auto p = zero_parameters(spec);
  p.layers[0].weights(0, 0) = 1.0;
  auto g = grad(spec, p, Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Zero(1, 1), LossKind::mse);
  EXPECT_DOUBLE_EQ(g.layers[0].weights(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.layers[0].bias(0), 2.0);
}

TEST(Grad, ZeroAtMinimum) {
  Rng rng(4);
  auto spec = NetworkSpec::mlp(3, {5}, 2, Head::linear);
  auto p = init_parameters(spec, rng);
  auto x = random_matrix(rng, 6, 3);
  auto g = grad(spec, p, x, forward(spec, p, x), LossKind::mse);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(g[k], 0.0);
}

TEST(Grad, MatchesCentralDifferences) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const bool ce = t % 2 == 1;
    const auto in = 1 + rng() % 4, out = ce ? 2 + rng() % 2 : 1 + rng() % 2;
    std::vector<std::size_t> hidden;
    for (std::size_t h = 0, n = 1 + rng() % 2; h < n; ++h) hidden.push_back(2 + rng() % 5);
    auto spec = NetworkSpec::mlp(in, hidden, out, ce ? Head::logits : Head::linear);
    auto p = init_parameters(spec, rng);
    for (auto& l : p.layers)
      for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = 0.1 * standard_normal(rng);
    auto x = random_matrix(rng, 5, static_cast<Eigen::Index>(in));
    Eigen::MatrixXd y;
    if (ce) {
      y.resize(5, 1);
      for (Eigen::Index i = 0; i < 5; ++i) y(i, 0) = static_cast<double>(rng() % out);
    } else {
      y = random_matrix(rng, 5, static_cast<Eigen::Index>(out));
    }
    const auto kind = ce ? LossKind::cross_entropy : LossKind::mse;
    auto g = grad(spec, p, x, y, kind);
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      Parameters plus = p, minus = p;
      plus[k] += 1e-5;
      minus[k] -= 1e-5;
      const double fd = (batch_loss(spec, plus, x, y, kind) - batch_loss(spec, minus, x, y, kind)) / 2e-5;
      const double denom = std::max({std::abs(fd), std::abs(g[k]), 1e-8});
      if (std::abs(fd - g[k]) < 1e-9) continue;
      worst = std::max(worst, std::abs(fd - g[k]) / denom);
    }
    EXPECT_LT(worst, 1e-4) << "configuration " << t;
  }
}

TEST(Init, UniformFanInBounds) {
  auto spec = NetworkSpec::mlp(9, {100, 100}, 1, Head::linear);
  Rng rng(6);
  auto p = init_parameters(spec, rng);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.widths[l]));
    const auto& layer = p.layers[l];
    EXPECT_LE(layer.weights.cwiseAbs().maxCoeff(), a);
    EXPECT_LE(layer.bias.cwiseAbs().maxCoeff(), a);
    // Variance of U(-a, a) is a^2 / 3.
    const double var = layer.weights.array().square().mean();
    EXPECT_NEAR(var, a * a / 3.0, 0.25 * a * a / 3.0);
  }
}

TEST(Train, ZeroStepsReturnsInitialParameters) {
  auto spec = NetworkSpec::mlp(2, {3}, 1, Head::linear);
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 42;
  auto res = train(spec, cfg, BatchSource::from_matrix(Eigen::MatrixXd::Ones(4, 2), Eigen::MatrixXd::Zero(4, 1)));
  Rng init(derive_seed(42, {1}));
  EXPECT_EQ(res.params, init_parameters(spec, init));
  EXPECT_TRUE(res.trace.empty());
}

TEST(Train, SolvesNoiselessLinearRegression) {
  Rng rng(6);
  auto x = random_matrix(rng, 512, 4);
  Eigen::VectorXd w(4);
  w << 0.5, -1.0, 2.0, 0.25;
  Eigen::MatrixXd y = x * w;
  auto spec = NetworkSpec::mlp(4, {100, 100}, 1, Head::linear);
  TrainConfig cfg;
  cfg.seed = 3;
  auto res = train(spec, cfg, BatchSource::from_matrix(x, y));
  EXPECT_LT(batch_loss(spec, res.params, x, y, LossKind::mse), 1e-3);
  EXPECT_EQ(res.trace.size(), 50u);
  EXPECT_EQ(res.trace[1].step, 100u);
}

TEST(Train, BitwiseDeterministic) {
  Rng rng(7);
  auto x = random_matrix(rng, 100, 3);
  Eigen::MatrixXd y = x.rowwise().sum();
  auto spec = NetworkSpec::mlp(3, {8}, 1, Head::linear);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 16;
  cfg.seed = 9;
  auto source = BatchSource::from_matrix(x, y);
  auto hook = source.inputs;
  source.inputs = [hook](std::span<const Eigen::Index> rows, Rng& r) {
    Eigen::MatrixXd b = hook(rows, r);
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      if (bernoulli(r, 0.3)) b(i, 0) = 10.0;
    return b;
  };
  auto a = train(spec, cfg, source);
  auto b = train(spec, cfg, source);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].loss, b.trace[k].loss);
  cfg.seed = 10;
  EXPECT_FALSE(train(spec, cfg, source).params == a.params);
}

TEST(Train, DivergenceReportsStep) {
  auto spec = NetworkSpec::mlp(1, {4}, 1, Head::linear);
  TrainConfig cfg;
  cfg.steps = 10;
  auto source = BatchSource::from_matrix(Eigen::MatrixXd::Constant(8, 1, 1e300), Eigen::MatrixXd::Zero(8, 1));
  try {
    train(spec, cfg, source);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(Predict, SimplexAndHeads) {
  Rng rng(8);
  auto spec = NetworkSpec::mlp(3, {6}, 4, Head::logits);
  auto p = init_parameters(spec, rng);
  Eigen::MatrixXd x = random_matrix(rng, 50, 3) * 30.0;
  auto probs = predict(spec, p, x);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-9);
    EXPECT_GE(probs.row(i).minCoeff(), 0.0);
  }
  auto lin = NetworkSpec::mlp(3, {6}, 2, Head::linear);
  auto pl = init_parameters(lin, rng);
  EXPECT_EQ(predict(lin, pl, x), forward(lin, pl, x));
}

TEST(Predict, ArgmaxInvariantUnderLogitShift) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    Eigen::RowVectorXd logits = random_matrix(rng, 1, 5);
    const double shift = 100.0 * standard_normal(rng);
    Eigen::MatrixXd shifted = (logits.array() + shift).matrix();
    EXPECT_EQ(argmax_row(softmax_rows(logits).row(0)), argmax_row(logits));
    EXPECT_EQ(argmax_row(softmax_rows(shifted).row(0)), argmax_row(logits));
  }
  Eigen::RowVectorXd tie(3);
  tie << 1.0, 2.0, 2.0;
  EXPECT_EQ(argmax_row(tie), 1);
}

TEST(Serialization, JsonRoundTripIsExact) {
  Rng rng(10);
  auto spec = NetworkSpec::mlp(3, {5, 4}, 2, Head::logits);
  auto p = init_parameters(spec, rng);
  auto [spec2, p2] = network_from_json(nlohmann::json::parse(network_to_json(spec, p).dump()));
  EXPECT_EQ(spec2, spec);
  EXPECT_EQ(p2, p);
}
