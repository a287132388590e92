#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cascadesplit/cascadesplit.hpp"

namespace testsupport {

namespace cs = cascadesplit;

inline std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double scale = 10.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> z(n);
  for (auto& v : z) v = u(rng);
  return z;
}

/// Uniform draw from the probability simplex (normalized exponentials).
inline cs::ProbVector random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) sum += (v = e(rng));
  for (auto& v : p) v /= sum;
  return cs::ProbVector(std::move(p));
}

inline std::vector<std::vector<double>> probes(std::uint64_t seed, std::size_t dim, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& x : out)
    for (auto& v : x) v = g(rng);
  return out;
}

/// Largest absolute logit difference between two models over the probes.
inline double sup_norm_gap(const cs::MlpModel& a, const cs::MlpModel& b,
                           const std::vector<std::vector<double>>& xs) {
  double gap = 0.0;
  for (const auto& x : xs) {
    const auto la = a.forward(x);
    const auto lb = b.forward(x);
    for (std::size_t i = 0; i < la.size(); ++i) gap = std::max(gap, std::abs(la[i] - lb[i]));
  }
  return gap;
}

/// Model with randomized biases too, so morph tests do not hide behind zeros.
inline cs::MlpModel random_model(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  cs::MlpModel m = cs::make_mlp(widths, seed);
  std::mt19937_64 rng(seed ^ 0xb1a5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& l : m.layers)
    for (auto& b : l.bias) b = u(rng);
  return m;
}

inline cs::Dataset blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                         std::uint64_t seed, std::size_t clusters = 1) {
  cs::SyntheticSpec s;
  s.classes = classes;
  s.samples_per_class.assign(classes, per_class);
  s.input_dim = dim;
  s.separation = separation;
  s.clusters_per_class = clusters;
  s.seed = seed;
  return cs::gen_synthetic(s);
}

/// Softmax evaluated in long double, independent of the library's code path.
inline std::vector<long double> softmax_oracle(const std::vector<double>& z, long double t) {
  std::vector<long double> e(z.size());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (e[i] = std::exp(static_cast<long double>(z[i]) / t));
  for (auto& v : e) v /= sum;
  return e;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Meta-feature set where the label is "correct" exactly when MP > 0.8.
/// Probability vectors are drawn far from the boundary on both sides.
inline std::vector<cs::DuSample> separable_meta_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> hi(0.9, 0.999), lo(0.3, 0.6), u(0.0, 1.0);
  std::vector<cs::DuSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool correct = i % 2 == 0;
    const double top = correct ? hi(rng) : lo(rng);
    const double split = 0.5 + 0.5 * u(rng);
    std::vector<double> p{top, (1.0 - top) * split, 0.0};
    p[2] = std::max(0.0, 1.0 - p[0] - p[1]);
    std::shuffle(p.begin(), p.end(), rng);
    out.push_back(cs::DuSample{cs::extract_meta(cs::ProbVector(p)), correct});
  }
  return out;
}


// Loss of one sample as a function of the model parameters.
inline double sample_loss(const cs::MlpModel& m, const cs::Sample& s, const cs::TrainConfig& cfg) {
  std::vector<double> d;
  const auto teacher = cfg.teacher ? cfg.teacher->forward(s.x) : cs::LogitVector{};
  return cs::loss_and_logit_grad(m.forward(s.x), s.label, teacher, cfg, d);
}

inline std::vector<double*> parameters(cs::MlpModel& m) {
  std::vector<double*> out;
  for (auto& l : m.layers) {
    for (auto& w : l.weights) out.push_back(&w);
    for (auto& b : l.bias) out.push_back(&b);
  }
  for (auto& s : m.skips)
    for (auto& w : s.weights) out.push_back(&w);
  return out;
}

// Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||).
inline double gradient_check(cs::MlpModel m, const cs::Sample& s, const cs::TrainConfig& cfg) {
  cs::MlpModel::Trace t;
  m.run(s.x, t);
  std::vector<double> dlogits;
  const auto teacher = cfg.teacher ? cfg.teacher->forward(s.x) : cs::LogitVector{};
  cs::loss_and_logit_grad(t.post.back(), s.label, teacher, cfg, dlogits);
  cs::MlpModel grad = m.zeros_like();
  m.backward(t, dlogits, grad);

  auto params = parameters(m);
  auto analytic = parameters(grad);
  double diff = 0, na = 0, nn = 0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = *params[i];
    *params[i] = keep + h;
    const double up = sample_loss(m, s, cfg);
    *params[i] = keep - h;
    const double down = sample_loss(m, s, cfg);
    *params[i] = keep;
    const double numeric = (up - down) / (2 * h);
    diff += (numeric - *analytic[i]) * (numeric - *analytic[i]);
    na += *analytic[i] * *analytic[i];
    nn += numeric * numeric;
  }
  return std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn) + 1e-300);
}

inline cs::MlpModel model_with_skip(std::uint64_t seed) {
  cs::MlpModel m = random_model({3, 6, 5, 4}, seed);
  m.skips.push_back(cs::SkipEdge{0, 2, std::vector<double>(5 * 3)});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& w : m.skips[0].weights) w = u(rng);
  return m;
}

}  // namespace testsupport
