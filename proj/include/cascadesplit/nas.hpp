#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/morph.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

struct SearchConfig {
  std::size_t steps = 5;
  std::size_t candidates = 8;
  std::size_t epochs_per_candidate = 5;
  std::size_t morphs_per_candidate = 1;
  double temperature = 20.0;
  /// Base step size. Distilled gradients shrink like 1/T^2, so candidate
  /// training runs at learning_rate * T^2 to keep the step comparable to
  /// hard-label training.
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  const MlpModel* teacher = nullptr;
  std::uint64_t seed = 0;

  void validate() const {
    if (candidates == 0) throw ConfigError("search needs at least one candidate per step");
    if (morphs_per_candidate == 0) throw ConfigError("candidates need at least one morph");
    if (!(temperature > 0.0)) throw ConfigError("search temperature must be positive");
    if (teacher == nullptr) throw ConfigError("search needs a teacher model");
  }
};

struct CandidateRecord {
  std::size_t step = 0;
  std::size_t candidate = 0;
  std::vector<MorphOp> ops;
  double softened_loss = 0.0;
  bool accepted = false;
  std::size_t parameters = 0;
};

struct SearchTrace {
  double initial_loss = 0.0;
  std::vector<CandidateRecord> candidates;
  /// Incumbent softened validation loss after each step.
  std::vector<double> best_so_far;
};

struct SearchResult {
  MlpModel best;
  SearchTrace trace;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace detail

/// Greedy hill climbing over function-preserving morphs. Every step draws
/// `candidates` children of the incumbent, trains each briefly on the
/// teacher's softened labels, scores them by softened validation loss and
/// keeps the best child only if it strictly beats the incumbent. Ties among
/// children go to the lowest candidate index.
inline SearchResult hill_climb(const MlpModel& seed_model, std::span<const Sample> train_set,
                               std::span<const Sample> validation_set, const SearchConfig& cfg) {
  SearchResult result;
  result.best = seed_model;
  if (cfg.steps == 0) return result;
  cfg.validate();
  seed_model.validate();

  double incumbent_loss = softened_loss(seed_model, *cfg.teacher, validation_set, cfg.temperature);
  result.trace.initial_loss = incumbent_loss;

  TrainConfig tc;
  tc.epochs = cfg.epochs_per_candidate;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate * cfg.temperature * cfg.temperature;
  tc.loss = LossKind::Distilled;
  tc.temperature = cfg.temperature;
  tc.teacher = cfg.teacher;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::mt19937_64 rng(detail::mix_seed(cfg.seed, step, 0));
    std::size_t best_index = cfg.candidates;
    double best_loss = 0.0;
    MlpModel best_model;
    const std::size_t first_record = result.trace.candidates.size();

    for (std::size_t c = 0; c < cfg.candidates; ++c) {
      CandidateRecord rec;
      rec.step = step;
      rec.candidate = c;
      MlpModel child = result.best;
      for (std::size_t m = 0; m < cfg.morphs_per_candidate; ++m) {
        rec.ops.push_back(random_morph(child, rng));
        child = apply_morph(child, rec.ops.back());
      }
      tc.seed = detail::mix_seed(cfg.seed, step, c + 1);
      try {
        child = train(std::move(child), train_set, tc).model;
      } catch (const TrainingError& e) {
        std::string ops;
        for (const auto& op : rec.ops) ops += (ops.empty() ? "" : " ") + op.describe();
        throw TrainingError("search step " + std::to_string(step) + " candidate " +
                            std::to_string(c) + " [" + ops + "]: " + e.what());
      }
      rec.softened_loss = softened_loss(child, *cfg.teacher, validation_set, cfg.temperature);
      rec.parameters = child.parameter_count();
      if (best_index == cfg.candidates || rec.softened_loss < best_loss) {
        best_index = c;
        best_loss = rec.softened_loss;
        best_model = std::move(child);
      }
      result.trace.candidates.push_back(std::move(rec));
    }

    if (best_loss < incumbent_loss) {
      incumbent_loss = best_loss;
      result.best = std::move(best_model);
      result.trace.candidates[first_record + best_index].accepted = true;
    }
    result.trace.best_so_far.push_back(incumbent_loss);
  }
  return result;
}

/// One JSON record per candidate.
inline std::string trace_to_string(const SearchTrace& trace) {
  std::ostringstream os;
  for (const auto& r : trace.candidates) {
    os << "{\"step\":" << r.step << ",\"candidate\":" << r.candidate << ",\"ops\":[";
    for (std::size_t i = 0; i < r.ops.size(); ++i)
      os << (i ? "," : "") << '"' << r.ops[i].describe() << '"';
    os << "],\"softened_loss\":" << textio::format_real(r.softened_loss)
       << ",\"parameters\":" << r.parameters << ",\"accepted\":" << (r.accepted ? "true" : "false")
       << "}\n";
  }
  return os.str();
}

}  // namespace cascadesplit
