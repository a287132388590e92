#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/sample.hpp"
#include "cascadesplit/softmax.hpp"

namespace cascadesplit {

enum class Activation { Relu, Identity };

inline const char* to_string(Activation a) {
  return a == Activation::Relu ? "relu" : "identity";
}

/// Fully connected layer. `weights` is row-major, out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  Activation activation = Activation::Identity;

  double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Additive skip edge between activation nodes. Node 0 is the input and node
/// k is the output of layer k-1. The edge adds `weights * h[src]` to the
/// pre-activation of node `dst`; `weights` is row-major, width(dst) x width(src),
/// so a width mismatch is absorbed by the projection.
struct SkipEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::vector<double> weights;

  friend bool operator==(const SkipEdge&, const SkipEdge&) = default;
};

/// Dense multilayer perceptron with optional additive skip edges. Hidden
/// layers use the rectifier; the last layer is an identity logit layer.
struct MlpModel {
  std::vector<DenseLayer> layers;
  std::vector<SkipEdge> skips;

  /// Number of dense layers (activation nodes minus one).
  std::size_t depth() const { return layers.size(); }
  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().out; }

  std::size_t width(std::size_t node) const {
    return node == 0 ? layers.at(0).in : layers.at(node - 1).out;
  }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    if (layers.empty()) return w;
    w.push_back(layers.front().in);
    for (const auto& l : layers) w.push_back(l.out);
    return w;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    for (const auto& s : skips) n += s.weights.size();
    return n;
  }

  bool has_skip(std::size_t src, std::size_t dst) const {
    return std::any_of(skips.begin(), skips.end(),
                       [&](const SkipEdge& s) { return s.src == src && s.dst == dst; });
  }

  /// Throws DomainError when a structural invariant is broken.
  void validate() const {
    if (layers.empty()) throw DomainError("model has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.in == 0 || l.out == 0) throw DomainError("layer with zero width");
      if (k > 0 && layers[k - 1].out != l.in)
        throw DomainError("layer " + std::to_string(k) + " input width mismatch");
      if (l.weights.size() != l.in * l.out || l.bias.size() != l.out)
        throw DomainError("layer " + std::to_string(k) + " parameter shape mismatch");
      const Activation expected =
          k + 1 == layers.size() ? Activation::Identity : Activation::Relu;
      if (l.activation != expected)
        throw DomainError("layer " + std::to_string(k) + " has wrong activation");
      for (double v : l.weights)
        if (!std::isfinite(v)) throw DomainError("non-finite weight");
      for (double v : l.bias)
        if (!std::isfinite(v)) throw DomainError("non-finite bias");
    }
    for (std::size_t i = 0; i < skips.size(); ++i) {
      const auto& s = skips[i];
      if (s.src >= s.dst || s.dst > layers.size())
        throw DomainError("skip edge must point forward to an existing node");
      if (s.weights.size() != width(s.dst) * width(s.src))
        throw DomainError("skip projection shape mismatch");
      for (std::size_t j = 0; j < i; ++j)
        if (skips[j].src == s.src && skips[j].dst == s.dst)
          throw DomainError("duplicate skip edge");
      for (double v : s.weights)
        if (!std::isfinite(v)) throw DomainError("non-finite skip weight");
    }
  }

  void set_zero() {
    for (auto& l : layers) {
      std::fill(l.weights.begin(), l.weights.end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    for (auto& s : skips) std::fill(s.weights.begin(), s.weights.end(), 0.0);
  }

  /// Same architecture with every parameter set to zero.
  MlpModel zeros_like() const {
    MlpModel z = *this;
    z.set_zero();
    return z;
  }

  /// Activations of every node for input `x`; post[0] is the input itself.
  struct Trace {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> post;
  };

  void run(std::span<const double> x, Trace& t) const {
    if (x.size() != input_width())
      throw DomainError("input has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(input_width()));
    const std::size_t nodes = layers.size() + 1;
    t.pre.resize(nodes);
    t.post.resize(nodes);
    t.post[0].assign(x.begin(), x.end());
    for (std::size_t node = 1; node < nodes; ++node) {
      const DenseLayer& l = layers[node - 1];
      auto& pre = t.pre[node];
      pre.assign(l.bias.begin(), l.bias.end());
      const auto& prev = t.post[node - 1];
      for (std::size_t r = 0; r < l.out; ++r) {
        const double* row = &l.weights[r * l.in];
        double acc = 0.0;
        for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * prev[c];
        pre[r] += acc;
      }
      for (const auto& s : skips) {
        if (s.dst != node) continue;
        const auto& src = t.post[s.src];
        const std::size_t sw = src.size();
        for (std::size_t r = 0; r < l.out; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < sw; ++c) acc += s.weights[r * sw + c] * src[c];
          pre[r] += acc;
        }
      }
      auto& post = t.post[node];
      post = pre;
      if (l.activation == Activation::Relu)
        for (double& v : post) v = std::max(v, 0.0);
    }
  }

  LogitVector forward(std::span<const double> x) const {
    Trace t;
    run(x, t);
    return std::move(t.post.back());
  }

  /// Post-activation of an intermediate node (node 0 returns the input).
  std::vector<double> activation_at(std::span<const double> x, std::size_t node) const {
    if (node > layers.size()) throw DomainError("node index out of range");
    Trace t;
    run(x, t);
    return std::move(t.post[node]);
  }

  /// Accumulates dLoss/dParams into `grad` given dLoss/dLogits for the
  /// forward pass recorded in `t`.
  void backward(const Trace& t, std::span<const double> dlogits, MlpModel& grad) const {
    const std::size_t nodes = layers.size() + 1;
    std::vector<std::vector<double>> dpost(nodes);
    for (std::size_t n = 0; n < nodes; ++n) dpost[n].assign(t.post[n].size(), 0.0);
    dpost.back().assign(dlogits.begin(), dlogits.end());
    std::vector<double> dpre;
    for (std::size_t node = nodes - 1; node >= 1; --node) {
      const DenseLayer& l = layers[node - 1];
      DenseLayer& g = grad.layers[node - 1];
      dpre = dpost[node];
      if (l.activation == Activation::Relu)
        for (std::size_t r = 0; r < l.out; ++r)
          if (t.pre[node][r] <= 0.0) dpre[r] = 0.0;
      const auto& prev = t.post[node - 1];
      auto& dprev = dpost[node - 1];
      for (std::size_t r = 0; r < l.out; ++r) {
        const double d = dpre[r];
        if (d == 0.0) continue;
        g.bias[r] += d;
        double* grow = &g.weights[r * l.in];
        const double* wrow = &l.weights[r * l.in];
        for (std::size_t c = 0; c < l.in; ++c) {
          grow[c] += d * prev[c];
          dprev[c] += d * wrow[c];
        }
      }
      for (std::size_t i = 0; i < skips.size(); ++i) {
        const SkipEdge& s = skips[i];
        if (s.dst != node) continue;
        SkipEdge& gs = grad.skips[i];
        const auto& src = t.post[s.src];
        auto& dsrc = dpost[s.src];
        const std::size_t sw = src.size();
        for (std::size_t r = 0; r < l.out; ++r) {
          const double d = dpre[r];
          if (d == 0.0) continue;
          for (std::size_t c = 0; c < sw; ++c) {
            gs.weights[r * sw + c] += d * src[c];
            dsrc[c] += d * s.weights[r * sw + c];
          }
        }
      }
    }
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Dense stack with the given node widths, scaled-uniform weights in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] and zero biases.
inline MlpModel make_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw DomainError("a model needs at least input and output widths");
  std::mt19937_64 rng(seed);
  MlpModel m;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    DenseLayer l;
    l.in = widths[k];
    l.out = widths[k + 1];
    if (l.in == 0 || l.out == 0) throw DomainError("zero layer width");
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in));
    std::uniform_real_distribution<double> dist(-scale, scale);
    l.weights.resize(l.in * l.out);
    for (double& w : l.weights) w = dist(rng);
    l.bias.assign(l.out, 0.0);
    l.activation = k + 2 == widths.size() ? Activation::Identity : Activation::Relu;
    m.layers.push_back(std::move(l));
  }
  return m;
}

/// Fresh parameters for the same architecture (skip projections included).
inline MlpModel reinitialize(const MlpModel& arch, std::uint64_t seed) {
  MlpModel m = make_mlp(arch.widths(), seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& s : arch.skips) {
    SkipEdge e{s.src, s.dst, std::vector<double>(s.weights.size())};
    const double scale = 1.0 / std::sqrt(static_cast<double>(arch.width(s.src)));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (double& w : e.weights) w = dist(rng);
    m.skips.push_back(std::move(e));
  }
  return m;
}

enum class LossKind { HardLabel, Distilled };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::HardLabel;
  double temperature = 1.0;
  const MlpModel* teacher = nullptr;
  /// Weight of the hard-label term mixed into the distilled loss. Zero keeps
  /// the pure softened-label objective.
  double hard_weight = 0.0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (loss == LossKind::Distilled) {
      if (teacher == nullptr) throw ConfigError("distilled loss requires a teacher model");
      if (!(temperature > 0.0)) throw ConfigError("distilled loss requires temperature > 0");
      if (hard_weight < 0.0 || hard_weight > 1.0)
        throw ConfigError("hard-label mixing weight must lie in [0,1]");
    }
  }
};

/// Loss of one sample and its gradient with respect to the logits.
/// `teacher_logits` is only read in distilled mode.
inline double loss_and_logit_grad(std::span<const double> logits, std::size_t label,
                                  std::span<const double> teacher_logits,
                                  const TrainConfig& cfg, std::vector<double>& dlogits) {
  const std::size_t n = logits.size();
  if (label >= n) throw DomainError("label index exceeds class count");
  dlogits.assign(n, 0.0);
  std::vector<double> p(n);
  double loss = 0.0;
  double hard = cfg.loss == LossKind::HardLabel ? 1.0 : cfg.hard_weight;
  if (cfg.loss == LossKind::Distilled) {
    const double soft = 1.0 - cfg.hard_weight;
    const double t = cfg.temperature;
    std::vector<double> q(n);
    detail::softmax_into(teacher_logits, t, q);
    detail::softmax_into(logits, t, p);
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h -= q[i] * std::log(std::max(p[i], kLogFloor));
      dlogits[i] += soft * (p[i] - q[i]) / t;
    }
    loss += soft * h;
  }
  if (hard > 0.0) {
    detail::softmax_into(logits, 1.0, p);
    loss += hard * -std::log(std::max(p[label], kLogFloor));
    for (std::size_t i = 0; i < n; ++i)
      dlogits[i] += hard * (p[i] - (i == label ? 1.0 : 0.0));
  }
  return loss;
}

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;
};

/// Seeded mini-batch gradient descent. The per-epoch sample order is a pure
/// function of cfg.seed and the epoch index.
inline TrainResult train(MlpModel model, std::span<const Sample> data, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (data.empty()) throw DomainError("training set is empty");
  const std::size_t classes = model.output_width();
  for (const auto& s : data)
    if (s.label >= classes) throw DomainError("label index exceeds class count");

  std::vector<LogitVector> teacher_logits;
  if (cfg.loss == LossKind::Distilled) {
    if (cfg.teacher->output_width() != classes)
      throw ConfigError("teacher and student class counts differ");
    teacher_logits.reserve(data.size());
    for (const auto& s : data) teacher_logits.push_back(cfg.teacher->forward(s.x));
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  MlpModel grad = model.zeros_like();
  MlpModel::Trace trace;
  std::vector<double> dlogits;
  static const std::vector<double> kNoTeacher;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grad.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        model.run(data[idx].x, trace);
        const auto& teacher =
            teacher_logits.empty() ? kNoTeacher : teacher_logits[idx];
        epoch_loss += loss_and_logit_grad(trace.post.back(), data[idx].label, teacher, cfg, dlogits);
        model.backward(trace, dlogits, grad);
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        auto& l = model.layers[k];
        const auto& g = grad.layers[k];
        for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= step * g.weights[i];
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= step * g.bias[i];
      }
      for (std::size_t k = 0; k < model.skips.size(); ++k) {
        auto& s = model.skips[k];
        const auto& g = grad.skips[k];
        for (std::size_t i = 0; i < s.weights.size(); ++i) s.weights[i] -= step * g.weights[i];
      }
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss))
      throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1));
    result.loss_history.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

/// Fraction of samples whose argmax logit equals the label.
inline double accuracy(const MlpModel& model, std::span<const Sample> data) {
  if (data.empty()) throw DomainError("accuracy of an empty set");
  std::size_t hits = 0;
  for (const auto& s : data) hits += argmax(model.forward(s.x)) == s.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Mean softened-label loss of `student` against `teacher` over a set.
inline double softened_loss(const MlpModel& student, const MlpModel& teacher,
                            std::span<const Sample> data, double temperature) {
  if (data.empty()) throw DomainError("softened loss of an empty set");
  double total = 0.0;
  for (const auto& s : data)
    total += distill_loss(student.forward(s.x), teacher.forward(s.x), temperature);
  return total / static_cast<double>(data.size());
}

}  // namespace cascadesplit
