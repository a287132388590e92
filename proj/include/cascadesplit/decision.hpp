#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/meta.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/model_io.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

/// Meta features of one client classification, labeled with whether the
/// client got it right.
struct DuSample {
  MetaFeatures features;
  bool correct = false;
};

/// Per-exit escalation threshold in [0,1].
class Sensitivity {
 public:
  constexpr Sensitivity() = default;
  explicit Sensitivity(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0))
      throw DomainError("sensitivity must lie in [0,1]");
  }
  constexpr double value() const { return value_; }
  friend bool operator==(const Sensitivity&, const Sensitivity&) = default;

 private:
  double value_ = 0.0;
};

enum class GateDecision { KeepLocal, Escalate };

/// Escalate when the certainty falls strictly below the sensitivity. A
/// sensitivity of exactly 1 escalates everything, so both ends of the range
/// mean "all local" and "all escalated".
inline GateDecision gate(double certainty, Sensitivity sensitivity) {
  if (sensitivity.value() >= 1.0) return GateDecision::Escalate;
  return certainty < sensitivity.value() ? GateDecision::Escalate : GateDecision::KeepLocal;
}

/// One sample per classification; predictions are normally argmax(probs).
inline std::vector<DuSample> build_du_dataset(std::span<const ProbVector> probs_list,
                                              std::span<const std::size_t> predictions,
                                              std::span<const std::size_t> labels) {
  if (probs_list.size() != predictions.size() || probs_list.size() != labels.size())
    throw DomainError("probabilities, predictions and labels differ in length");
  std::vector<DuSample> out;
  out.reserve(probs_list.size());
  for (std::size_t i = 0; i < probs_list.size(); ++i)
    out.push_back(DuSample{extract_meta(probs_list[i]), predictions[i] == labels[i]});
  return out;
}

/// Convenience overload deriving each prediction as argmax of its vector.
inline std::vector<DuSample> build_du_dataset(std::span<const ProbVector> probs_list,
                                              std::span<const std::size_t> labels) {
  std::vector<std::size_t> predictions;
  predictions.reserve(probs_list.size());
  for (const auto& p : probs_list) predictions.push_back(p.predicted_class());
  return build_du_dataset(probs_list, predictions, labels);
}

struct DuTrainConfig {
  std::size_t hidden_width = 16;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

/// Binary correctness classifier over standardized meta features. Class 1 of
/// the classifier is "the client was correct".
struct DecisionUnit {
  static constexpr std::size_t kHiddenLayers = 4;

  MlpModel classifier;
  std::array<double, MetaFeatures::kCount> mean{};
  std::array<double, MetaFeatures::kCount> scale{1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  std::array<double, MetaFeatures::kCount> normalize(const MetaFeatures& f) const {
    auto v = f.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean[i]) / scale[i];
    return v;
  }

  void validate() const {
    classifier.validate();
    const auto w = classifier.widths();
    if (w.size() != kHiddenLayers + 2 || w.front() != MetaFeatures::kCount || w.back() != 2)
      throw DomainError("decision unit classifier must have widths [4,h,h,h,h,2]");
    for (std::size_t i = 1; i <= kHiddenLayers; ++i)
      if (w[i] != w[1]) throw DomainError("decision unit hidden layers must share one width");
    for (double s : scale)
      if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("normalization scale must be positive");
    for (double m : mean)
      if (!std::isfinite(m)) throw DomainError("normalization mean must be finite");
  }

  friend bool operator==(const DecisionUnit&, const DecisionUnit&) = default;
};

inline DecisionUnit train_decision_unit(std::span<const DuSample> samples, const DuTrainConfig& cfg) {
  if (samples.size() < 2) throw TrainingError("decision unit needs at least 2 samples");
  const auto positives = std::count_if(samples.begin(), samples.end(),
                                       [](const DuSample& s) { return s.correct; });
  if (positives == 0 || static_cast<std::size_t>(positives) == samples.size())
    throw TrainingError("decision unit training set contains a single class");
  if (cfg.hidden_width == 0) throw ConfigError("decision unit hidden width must be positive");

  DecisionUnit du;
  du.seed = cfg.seed;
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto v = s.features.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) du.mean[i] += v[i];
  }
  for (double& m : du.mean) m /= n;
  std::array<double, MetaFeatures::kCount> var{};
  for (const auto& s : samples) {
    const auto v = s.features.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) var[i] += (v[i] - du.mean[i]) * (v[i] - du.mean[i]);
  }
  for (std::size_t i = 0; i < var.size(); ++i) {
    const double sd = std::sqrt(var[i] / n);
    du.scale[i] = sd > 1e-12 ? sd : 1.0;
  }

  Dataset normalized;
  normalized.reserve(samples.size());
  for (const auto& s : samples) {
    const auto v = du.normalize(s.features);
    normalized.push_back(Sample{{v.begin(), v.end()}, s.correct ? 1u : 0u});
  }
  const std::size_t h = cfg.hidden_width;
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = cfg.seed;
  tc.loss = LossKind::HardLabel;
  du.classifier = train(make_mlp({MetaFeatures::kCount, h, h, h, h, 2}, cfg.seed), normalized, tc).model;
  return du;
}

/// Probability, under the decision unit, that the client classified correctly.
inline double certainty(const DecisionUnit& du, const MetaFeatures& features) {
  const auto v = du.normalize(features);
  const auto logits = du.classifier.forward(v);
  return softmax_t(logits, 1.0)[1];
}

/// Area under the ROC curve of `scores` ranking positives above negatives,
/// counting ties as one half.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DomainError("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[idx[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw DomainError("ROC AUC needs both classes");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline constexpr const char* kDecisionUnitFormat = "cascadesplit-du/1";

inline void write_decision_unit(std::ostream& os, const DecisionUnit& du) {
  os << "{\"format\":\"" << kDecisionUnitFormat << "\","
     << "\"features\":[\"max_probability\",\"least_confidence\",\"entropy\",\"std_dev\"],"
     << "\"mean\":";
  textio::write_reals(os, du.mean);
  os << ",\"scale\":";
  textio::write_reals(os, du.scale);
  os << ",\"seed\":" << du.seed << ",\n\"classifier\":";
  write_model(os, du.classifier);
  os << "}";
}

inline void save_decision_unit(const DecisionUnit& du, const std::string& path) {
  std::ostringstream ss;
  write_decision_unit(ss, du);
  ss << '\n';
  textio::write_file(path, ss.str());
}

inline DecisionUnit parse_decision_unit(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != kDecisionUnitFormat)
      throw DataError("unsupported decision unit format");
    const auto order = j.at("features").get<std::vector<std::string>>();
    if (order != std::vector<std::string>{"max_probability", "least_confidence", "entropy", "std_dev"})
      throw DataError("decision unit feature order does not match (MP, LC, entropy, std)");
    DecisionUnit du;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    if (mean.size() != MetaFeatures::kCount || scale.size() != MetaFeatures::kCount)
      throw DataError("decision unit normalization must have 4 entries");
    std::copy(mean.begin(), mean.end(), du.mean.begin());
    std::copy(scale.begin(), scale.end(), du.scale.begin());
    du.seed = j.at("seed").get<std::uint64_t>();
    du.classifier = model_from_json(j.at("classifier"));
    du.validate();
    return du;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed decision unit document: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(std::string("invalid decision unit: ") + e.what());
  }
}

inline DecisionUnit load_decision_unit(const std::string& path) {
  return parse_decision_unit(textio::read_file(path));
}

}  // namespace cascadesplit
