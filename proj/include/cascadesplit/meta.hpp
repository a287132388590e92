#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "cascadesplit/softmax.hpp"

namespace cascadesplit {

/// Uncertainty summary of one classification output. Serialized order is
/// always (max_probability, least_confidence, entropy, std_dev).
struct MetaFeatures {
  double max_probability = 0.0;
  /// Margin between the largest and second-largest probability.
  double least_confidence = 0.0;
  /// sum p ln p, so it lies in [-ln N, 0]; 0 only for a one-hot vector.
  double entropy = 0.0;
  /// Population standard deviation of the probabilities.
  double std_dev = 0.0;

  static constexpr std::size_t kCount = 4;

  std::array<double, kCount> to_array() const {
    return {max_probability, least_confidence, entropy, std_dev};
  }

  friend bool operator==(const MetaFeatures&, const MetaFeatures&) = default;
};

inline MetaFeatures extract_meta(const ProbVector& probs) {
  const auto p = probs.values();
  const std::size_t n = p.size();
  if (n < 2) throw DomainError("meta information needs at least 2 classes");

  // Every reduction runs over the sorted copy so the result does not depend
  // on class order, bit for bit.
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  MetaFeatures f;
  f.max_probability = sorted[0];
  f.least_confidence = sorted[0] - sorted[1];
  double mean = 0.0;
  for (double v : sorted) {
    if (v > 0.0) f.entropy += v * std::log(v);
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : sorted) var += (v - mean) * (v - mean);
  f.std_dev = std::sqrt(var / static_cast<double>(n));
  return f;
}

}  // namespace cascadesplit
