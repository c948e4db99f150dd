#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "knockout/error.hpp"
#include "knockout/random.hpp"

// Dense ReLU network f_θ with hand-written reverse-mode gradients and Adam.
// Rows of a batch are samples.

namespace knockout {

enum class Head { linear, logits };
enum class LossKind { mse, cross_entropy };
enum class MaskGranularity { per_batch, per_sample };

struct NetworkSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Head head = Head::linear;

  /// input -> hidden... -> output with ReLU on every hidden layer.
  static NetworkSpec mlp(std::size_t input, std::vector<std::size_t> hidden, std::size_t output, Head head) {
    NetworkSpec s;
    s.widths.push_back(input);
    s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
    s.widths.push_back(output);
    s.head = head;
    s.validate();
    return s;
  }

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }

  void validate() const {
    if (widths.size() < 2) throw Error("network needs at least an input and an output width");
    for (auto w : widths)
      if (w == 0) throw Error("network widths must be positive");
    if (head == Head::logits && output_width() < 2) throw Error("logits head needs at least two classes");
  }

  bool operator==(const NetworkSpec&) const = default;
};

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

/// θ, flat-indexable in layer order (weights column-major, then bias).
struct Parameters {
  std::vector<Layer> layers;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }

  double& operator[](std::size_t k) { return const_cast<double&>(std::as_const(*this)[k]); }
  const double& operator[](std::size_t k) const {
    for (const auto& l : layers) {
      const auto nw = static_cast<std::size_t>(l.weights.size());
      if (k < nw) return l.weights.data()[k];
      k -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (k < nb) return l.bias.data()[k];
      k -= nb;
    }
    throw Error("parameter index out of range");
  }

  bool operator==(const Parameters& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l)
      if (layers[l].weights != o.layers[l].weights || layers[l].bias != o.layers[l].bias) return false;
    return true;
  }

  void check_shapes(const NetworkSpec& spec) const {
    if (layers.size() != spec.layer_count()) throw Error("parameter layer count does not match network spec");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(spec.widths[l]), out = static_cast<Eigen::Index>(spec.widths[l + 1]);
      if (layers[l].weights.rows() != out || layers[l].weights.cols() != in || layers[l].bias.size() != out)
        throw Error("parameter shapes of layer " + std::to_string(l) + " do not match network spec");
    }
  }
};

inline Parameters zero_parameters(const NetworkSpec& spec) {
  spec.validate();
  Parameters p;
  for (std::size_t l = 0; l < spec.layer_count(); ++l)
    p.layers.push_back({Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.widths[l + 1]),
                                              static_cast<Eigen::Index>(spec.widths[l])),
                        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.widths[l + 1]))});
  return p;
}

/// Uniform fan-in init, U(-a, a) with a = 1 / sqrt(fan_in), for weights and
/// biases alike (the usual default for fully connected layers).
inline Parameters init_parameters(const NetworkSpec& spec, Rng& rng) {
  Parameters p = zero_parameters(spec);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.widths[l]));
    std::uniform_real_distribution<double> u(-a, a);
    auto& layer = p.layers[l];
    for (Eigen::Index k = 0; k < layer.weights.size(); ++k) layer.weights.data()[k] = u(rng);
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias.data()[k] = u(rng);
  }
  return p;
}

namespace detail {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // a_0 = input, a_l after layer l
};

inline Eigen::MatrixXd run_forward(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& batch,
                                   ForwardCache* cache) {
  spec.validate();
  params.check_shapes(spec);
  if (static_cast<std::size_t>(batch.cols()) != spec.input_width())
    throw Error("batch width " + std::to_string(batch.cols()) + " does not match network input width " +
                std::to_string(spec.input_width()));
  if (!batch.allFinite()) throw Error("non-finite network input");
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(batch);
  }
  Eigen::MatrixXd a = batch;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z(a.rows(), layer.weights.rows());
    z.noalias() = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    if (l + 1 < params.layers.size()) z = z.cwiseMax(0.0);
    if (!z.allFinite()) throw NonFinite("non-finite activation in layer " + std::to_string(l));
    if (cache) cache->activations.push_back(z);
    a = std::move(z);
  }
  return a;
}

inline void check_targets(const NetworkSpec& spec, const Eigen::MatrixXd& out, const Eigen::MatrixXd& targets,
                          LossKind kind) {
  if (targets.rows() != out.rows()) throw Error("target row count does not match batch");
  if (kind == LossKind::mse) {
    if (targets.cols() != out.cols()) throw Error("mse targets must match the output width");
  } else {
    if (spec.head != Head::logits) throw Error("cross-entropy needs a logits head");
    if (targets.cols() != 1) throw Error("cross-entropy targets are one class index per row");
    for (Eigen::Index i = 0; i < targets.rows(); ++i) {
      const double c = targets(i, 0);
      if (c != std::round(c) || c < 0 || c >= static_cast<double>(out.cols()))
        throw Error("cross-entropy target is not a valid class index");
    }
  }
}

/// Batch-mean loss and dL/d(output).
inline double loss_and_output_grad(const Eigen::MatrixXd& out, const Eigen::MatrixXd& targets, LossKind kind,
                                   Eigen::MatrixXd* dout) {
  const double n = static_cast<double>(out.rows());
  if (kind == LossKind::mse) {
    Eigen::MatrixXd diff = out - targets;
    if (dout) *dout = (2.0 / n) * diff;
    return diff.squaredNorm() / n;
  }
  double total = 0.0;
  if (dout) dout->resize(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    Eigen::RowVectorXd e = (out.row(i).array() - m).exp().matrix();
    const double s = e.sum();
    const auto c = static_cast<Eigen::Index>(targets(i, 0));
    total += std::log(s) + m - out(i, c);
    if (dout) {
      dout->row(i) = e / s;
      (*dout)(i, c) -= 1.0;
      dout->row(i) /= n;
    }
  }
  return total / n;
}

}  // namespace detail

/// Raw outputs: regression values for a linear head, logits otherwise.
inline Eigen::MatrixXd forward(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& batch) {
  return detail::run_forward(spec, params, batch, nullptr);
}

inline double batch_loss(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& batch,
                         const Eigen::MatrixXd& targets, LossKind kind) {
  auto out = forward(spec, params, batch);
  detail::check_targets(spec, out, targets, kind);
  return detail::loss_and_output_grad(out, targets, kind, nullptr);
}

struct LossAndGrad {
  double loss = 0.0;
  Parameters grad;
};

/// Exact reverse-mode gradient of the batch-mean loss.
inline LossAndGrad loss_and_grad(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& batch,
                                 const Eigen::MatrixXd& targets, LossKind kind) {
  detail::ForwardCache cache;
  auto out = detail::run_forward(spec, params, batch, &cache);
  detail::check_targets(spec, out, targets, kind);
  Eigen::MatrixXd g;
  LossAndGrad res;
  res.loss = detail::loss_and_output_grad(out, targets, kind, &g);
  if (!std::isfinite(res.loss)) throw NonFinite("non-finite loss");
  res.grad.layers.resize(params.layers.size());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& a_prev = cache.activations[l];
    auto& gl = res.grad.layers[l];
    gl.weights.noalias() = g.transpose() * a_prev;
    gl.bias = g.colwise().sum().transpose();
    if (!gl.weights.allFinite() || !gl.bias.allFinite())
      throw NonFinite("non-finite gradient in layer " + std::to_string(l));
    if (l > 0) {
      Eigen::MatrixXd back(g.rows(), params.layers[l].weights.cols());
      back.noalias() = g * params.layers[l].weights;
      g = (a_prev.array() > 0.0).select(back, 0.0);
    }
  }
  return res;
}

inline Parameters grad(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& batch,
                       const Eigen::MatrixXd& targets, LossKind kind) {
  return loss_and_grad(spec, params, batch, targets, kind).grad;
}

/// Row-wise softmax with max shift.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

/// Means (linear head) or class probabilities (logits head).
inline Eigen::MatrixXd predict(const NetworkSpec& spec, const Parameters& params, const Eigen::MatrixXd& rows) {
  auto out = forward(spec, params, rows);
  return spec.head == Head::logits ? softmax_rows(out) : out;
}

/// Index of the largest entry; the lowest index wins ties.
inline Eigen::Index argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k)
    if (row(k) > row(best)) best = k;
  return best;
}

struct AdamConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const Parameters& like, AdamConfig cfg) : cfg_(cfg), m_(like), v_(like) {
    for (auto* s : {&m_, &v_})
      for (auto& l : s->layers) {
        l.weights.setZero();
        l.bias.setZero();
      }
  }

  void step(Parameters& params, const Parameters& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](auto& p, const auto& gr, auto& m, auto& v) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gr;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gr.cwiseProduct(gr);
      p.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      update(params.layers[l].weights, g.layers[l].weights, m_.layers[l].weights, v_.layers[l].weights);
      update(params.layers[l].bias, g.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias);
    }
  }

 private:
  AdamConfig cfg_;
  Parameters m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t steps = 5000;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  MaskGranularity granularity = MaskGranularity::per_batch;
  std::size_t trace_every = 100;

  void validate() const {
    if (!(adam.learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (batch_size == 0) throw Error("batch size must be positive");
    if (trace_every == 0) throw Error("trace interval must be positive");
  }
};

/// Training rows seen through an augmentation hook: `inputs(rows, rng)` must
/// build the network input batch for the given row indices, drawing any
/// randomness from `rng` only.
struct BatchSource {
  Eigen::Index rows = 0;
  std::function<Eigen::MatrixXd(std::span<const Eigen::Index>, Rng&)> inputs;
  Eigen::MatrixXd targets;

  static BatchSource from_matrix(Eigen::MatrixXd x, Eigen::MatrixXd targets) {
    BatchSource s;
    s.rows = x.rows();
    s.targets = std::move(targets);
    s.inputs = [x = std::move(x)](std::span<const Eigen::Index> idx, Rng&) {
      Eigen::MatrixXd b(static_cast<Eigen::Index>(idx.size()), x.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) b.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
      return b;
    };
    return s;
  }
};

struct TracePoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  Parameters params;
  std::vector<TracePoint> trace;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, const std::string& cause)
      : Error("training diverged at step " + std::to_string(step) + ": " + cause), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Mini-batch Adam on the batch-mean loss. Batches walk through reshuffled
/// permutations of the rows. Bitwise reproducible for a fixed seed.
inline TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const BatchSource& data) {
  spec.validate();
  cfg.validate();
  if (data.rows <= 0) throw Error("training set is empty");
  if (data.targets.rows() != data.rows) throw Error("training targets do not match row count");
  Rng init_rng(derive_seed(cfg.seed, {1}));
  Rng order_rng(derive_seed(cfg.seed, {2}));
  Rng aug_rng(derive_seed(cfg.seed, {3}));

  TrainResult res{init_parameters(spec, init_rng), {}};
  if (cfg.steps == 0) return res;
  Adam adam(res.params, cfg.adam);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = order.size();
  const std::size_t bs = std::min<std::size_t>(cfg.batch_size, order.size());
  std::vector<Eigen::Index> batch_rows(bs);
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(bs), data.targets.cols());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < bs; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch_rows[i] = order[cursor++];
      targets.row(static_cast<Eigen::Index>(i)) = data.targets.row(batch_rows[i]);
    }
    Eigen::MatrixXd inputs = data.inputs(batch_rows, aug_rng);
    LossAndGrad lg;
    try {
      lg = loss_and_grad(spec, res.params, inputs, targets, cfg.loss);
    } catch (const NonFinite& e) {
      throw TrainingDiverged(step, e.what());
    }
    if (step % cfg.trace_every == 0) res.trace.push_back({step, lg.loss});
    adam.step(res.params, lg.grad);
  }
  return res;
}

// JSON form: {"widths": [...], "head": "linear", "layers": [{"weights": [[row]...], "bias": [...]}]}

inline nlohmann::json network_to_json(const NetworkSpec& spec, const Parameters& params) {
  nlohmann::json j;
  j["widths"] = spec.widths;
  j["head"] = spec.head == Head::linear ? "linear" : "logits";
  j["layers"] = nlohmann::json::array();
  for (const auto& l : params.layers) {
    nlohmann::json lj;
    lj["weights"] = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      std::vector<double> row(l.weights.row(r).begin(), l.weights.row(r).end());
      lj["weights"].push_back(row);
    }
    lj["bias"] = std::vector<double>(l.bias.begin(), l.bias.end());
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline std::pair<NetworkSpec, Parameters> network_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  const auto head = j.at("head").get<std::string>();
  if (head != "linear" && head != "logits") throw Error("unknown network head '" + head + "'");
  spec.head = head == "linear" ? Head::linear : Head::logits;
  spec.validate();
  Parameters p = zero_parameters(spec);
  const auto& layers = j.at("layers");
  if (layers.size() != p.layers.size()) throw Error("serialized network has the wrong layer count");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = layers[l].at("weights");
    auto& W = p.layers[l].weights;
    if (w.size() != static_cast<std::size_t>(W.rows())) throw Error("serialized weights have the wrong shape");
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      auto row = w[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (row.size() != static_cast<std::size_t>(W.cols())) throw Error("serialized weights have the wrong shape");
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = row[static_cast<std::size_t>(c)];
    }
    auto b = layers[l].at("bias").get<std::vector<double>>();
    if (b.size() != static_cast<std::size_t>(p.layers[l].bias.size())) throw Error("serialized bias has the wrong shape");
    for (std::size_t k = 0; k < b.size(); ++k) p.layers[l].bias(static_cast<Eigen::Index>(k)) = b[k];
  }
  return {spec, p};
}

}  // namespace knockout
