#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cascadesplit/errors.hpp"

namespace cascadesplit {

/// Raw classifier outputs, one entry per class.
using LogitVector = std::vector<double>;

/// Floor applied inside every logarithm of a probability.
inline constexpr double kLogFloor = 1e-12;

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// A normalized class-probability vector. Construction validates: at least
/// two classes, every entry in [0,1], entries summing to 1 within 1e-9.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2)
      throw DomainError("probability vector needs at least 2 classes");
    double sum = 0.0;
    for (double p : values_) {
      if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw DomainError("probability entry outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw DomainError("probabilities sum to " + std::to_string(sum) + ", not 1");
  }

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t predicted_class() const { return argmax(values_); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

namespace detail {

// Unchecked tempered softmax, used on hot training paths where the inputs are
// known to be finite.
inline void softmax_into(std::span<const double> logits, double temperature,
                         std::span<double> out) {
  double top = logits[0] / temperature;
  for (double z : logits) top = std::max(top, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - top);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
}

}  // namespace detail

/// Tempered softmax S_i = exp(z_i/T) / sum_j exp(z_j/T), stabilized by
/// subtracting max(z/T) before exponentiation.
inline ProbVector softmax_t(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw DomainError("temperature must be a positive finite real");
  if (logits.size() < 2) throw DomainError("softmax needs at least 2 logits");
  for (double z : logits)
    if (!std::isfinite(z)) throw DomainError("non-finite logit");
  std::vector<double> out(logits.size());
  detail::softmax_into(logits, temperature, out);
  return ProbVector(std::move(out));
}

/// H(target, predicted) = -sum target_i * ln max(predicted_i, 1e-12).
inline double cross_entropy(std::span<const double> target,
                            std::span<const double> predicted) {
  if (target.size() != predicted.size())
    throw DomainError("cross entropy over vectors of different length");
  double h = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    h -= target[i] * std::log(std::max(predicted[i], kLogFloor));
  return h;
}

/// Softened-label distillation loss: cross entropy between the teacher's and
/// the student's tempered softmax outputs.
inline double distill_loss(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           double temperature) {
  if (student_logits.size() != teacher_logits.size())
    throw DomainError("student and teacher logits differ in length");
  const ProbVector target = softmax_t(teacher_logits, temperature);
  const ProbVector predicted = softmax_t(student_logits, temperature);
  return cross_entropy(target.values(), predicted.values());
}

/// Gradient of distill_loss with respect to the student logits:
/// (softmax_t(student) - softmax_t(teacher)) / T.
inline std::vector<double> distill_loss_grad(std::span<const double> student_logits,
                                             std::span<const double> teacher_logits,
                                             double temperature) {
  if (student_logits.size() != teacher_logits.size())
    throw DomainError("student and teacher logits differ in length");
  const ProbVector q = softmax_t(teacher_logits, temperature);
  const ProbVector p = softmax_t(student_logits, temperature);
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (p[i] - q[i]) / temperature;
  return g;
}

}  // namespace cascadesplit
