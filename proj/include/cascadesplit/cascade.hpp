#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cascadesplit/decision.hpp"
#include "cascadesplit/errors.hpp"
#include "cascadesplit/meta.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/replay.hpp"
#include "cascadesplit/sample.hpp"
#include "cascadesplit/softmax.hpp"
#include "cascadesplit/textio.hpp"
#include "cascadesplit/two_exit.hpp"

namespace cascadesplit {

/// Compute and communication charges in millisecond-equivalents. `exit2` is
/// the end-to-end cost of reaching the second exit from the input, not an
/// increment on top of `exit1`.
struct CostModel {
  double exit1 = 38.0;
  double exit2 = 74.0;
  double communication = 100.0;
};

enum class FallbackPolicy { FailSample, UseLocalPrediction };

enum class Destination { Exit1, Exit2, Server, ServerFallbackLocal, Failed };

inline const char* to_string(Destination d) {
  switch (d) {
    case Destination::Exit1: return "exit1";
    case Destination::Exit2: return "exit2";
    case Destination::Server: return "server";
    case Destination::ServerFallbackLocal: return "server_fallback_local";
    case Destination::Failed: return "failed";
  }
  return "?";
}

using CertaintyFn = std::function<double(const MetaFeatures&)>;

inline CertaintyFn certainty_of(std::shared_ptr<const DecisionUnit> du) {
  return [du = std::move(du)](const MetaFeatures& f) { return certainty(*du, f); };
}

/// Result of asking the server about one sample: probabilities on success,
/// otherwise a non-empty failure description.
struct ServerReply {
  std::optional<ProbVector> probs;
  std::string failure;

  static ServerReply ok(ProbVector p) { return {std::move(p), {}}; }
  static ServerReply failed(std::string why) { return {std::nullopt, std::move(why)}; }
};

template <class Input>
struct ExitStage {
  std::function<LogitVector(const Input&)> predictor;
  CertaintyFn certainty;
  Sensitivity sensitivity;
};

template <class Input>
struct ServerBinding {
  std::function<ServerReply(const Input&)> classify;
  FallbackPolicy fallback = FallbackPolicy::UseLocalPrediction;
};

/// Two local exits followed by the server. With `exit1_enabled == false` the
/// first stage is skipped and only the second decision unit gates offloading.
template <class Input>
struct CascadePolicy {
  ExitStage<Input> exit1;
  ExitStage<Input> exit2;
  ServerBinding<Input> server;
  CostModel costs;
  bool exit1_enabled = true;

  void validate() const {
    if (exit1_enabled && (!exit1.predictor || !exit1.certainty))
      throw ConfigError("exit 1 is enabled but not bound");
    if (!exit2.predictor || !exit2.certainty) throw ConfigError("exit 2 is not bound");
    if (!server.classify) throw ConfigError("no server binding");
    if (costs.exit1 < 0.0 || costs.exit2 < 0.0 || costs.communication < 0.0)
      throw ConfigError("costs must be non-negative");
  }
};

struct RoutingOutcome {
  std::size_t sample_id = 0;
  Destination destination = Destination::Exit1;
  std::size_t predicted = 0;
  /// One entry per exit whose decision unit was consulted.
  std::vector<double> certainties;
  double compute_cost = 0.0;
  double communication_cost = 0.0;
  std::string failure;

  double cost() const { return compute_cost + communication_cost; }
};

inline std::size_t sample_id(const Sample&, std::size_t index) { return index; }
inline std::size_t sample_id(const ReplayRow& row, std::size_t) { return row.id; }

template <class Input>
RoutingOutcome route_sample(const CascadePolicy<Input>& policy, const Input& input,
                            std::size_t id = 0) {
  RoutingOutcome out;
  out.sample_id = id;
  if (policy.exit1_enabled) {
    const ProbVector p1 = softmax_t(policy.exit1.predictor(input), 1.0);
    const double c1 = policy.exit1.certainty(extract_meta(p1));
    out.certainties.push_back(c1);
    out.compute_cost = policy.costs.exit1;
    if (gate(c1, policy.exit1.sensitivity) == GateDecision::KeepLocal) {
      out.destination = Destination::Exit1;
      out.predicted = p1.predicted_class();
      return out;
    }
  }
  const ProbVector p2 = softmax_t(policy.exit2.predictor(input), 1.0);
  const double c2 = policy.exit2.certainty(extract_meta(p2));
  out.certainties.push_back(c2);
  out.compute_cost = policy.costs.exit2;
  if (gate(c2, policy.exit2.sensitivity) == GateDecision::KeepLocal) {
    out.destination = Destination::Exit2;
    out.predicted = p2.predicted_class();
    return out;
  }
  out.communication_cost = policy.costs.communication;
  ServerReply reply = policy.server.classify(input);
  if (reply.probs) {
    out.destination = Destination::Server;
    out.predicted = reply.probs->predicted_class();
    return out;
  }
  out.failure = std::move(reply.failure);
  if (policy.server.fallback == FallbackPolicy::UseLocalPrediction) {
    out.destination = Destination::ServerFallbackLocal;
    out.predicted = p2.predicted_class();
  } else {
    out.destination = Destination::Failed;
  }
  return out;
}

/// Exact routing counters. Samples that failed under FailSample are counted
/// in `failed` and excluded from `total` (S_T).
struct RoutingTally {
  std::size_t exit1_correct = 0;   // T_N1
  std::size_t exit2_correct = 0;   // T_N2
  std::size_t server_correct = 0;  // S_P
  std::size_t total = 0;           // S_T
  std::size_t exit1 = 0;
  std::size_t exit2 = 0;
  std::size_t server = 0;
  std::size_t fallback = 0;
  std::size_t fallback_correct = 0;
  std::size_t failed = 0;
  double compute_cost = 0.0;
  double communication_cost = 0.0;

  void add(const RoutingOutcome& o, std::size_t label) {
    const bool hit = o.predicted == label;
    compute_cost += o.compute_cost;
    communication_cost += o.communication_cost;
    switch (o.destination) {
      case Destination::Exit1: ++exit1; exit1_correct += hit; break;
      case Destination::Exit2: ++exit2; exit2_correct += hit; break;
      case Destination::Server: ++server; server_correct += hit; break;
      case Destination::ServerFallbackLocal: ++fallback; fallback_correct += hit; break;
      case Destination::Failed: ++failed; return;
    }
    ++total;
  }

  /// (T_N1 + T_N2 + S_P) / S_T, plus correct fallback predictions when the
  /// server was unreachable. NaN when every sample failed.
  double accuracy() const {
    if (total == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(exit1_correct + exit2_correct + server_correct + fallback_correct) /
           static_cast<double>(total);
  }

  std::size_t attempted() const { return total + failed; }
  std::size_t offloaded() const { return server + fallback + failed; }

  friend bool operator==(const RoutingTally&, const RoutingTally&) = default;
};

struct Evaluation {
  RoutingTally tally;
  double accuracy = 0.0;
  /// Share of all samples sent to the server, successful or not.
  double offload_fraction = 0.0;
  double exit1_fraction = 0.0;
  double mean_cost = 0.0;
};

inline Evaluation summarize(const RoutingTally& t) {
  Evaluation e;
  e.tally = t;
  const double n = static_cast<double>(t.attempted());
  e.accuracy = t.accuracy();
  e.offload_fraction = static_cast<double>(t.offloaded()) / n;
  e.exit1_fraction = static_cast<double>(t.exit1) / n;
  e.mean_cost = (t.compute_cost + t.communication_cost) / n;
  return e;
}

template <class Input>
Evaluation evaluate(const CascadePolicy<Input>& policy, std::span<const Input> data,
                    std::vector<RoutingOutcome>* outcomes = nullptr) {
  if (data.empty()) throw DomainError("cannot evaluate an empty dataset");
  policy.validate();
  RoutingTally tally;
  for (std::size_t i = 0; i < data.size(); ++i) {
    RoutingOutcome o = route_sample(policy, data[i], sample_id(data[i], i));
    tally.add(o, data[i].label);
    if (outcomes) outcomes->push_back(std::move(o));
  }
  return summarize(tally);
}

struct SweepResult {
  std::vector<double> s1;
  std::vector<double> s2;
  /// cells[i][j] is the evaluation at (s1[i], s2[j]).
  std::vector<std::vector<Evaluation>> cells;
};

/// Evaluates the policy at every (s1, s2) pair, rows in s1 order.
template <class Input>
SweepResult sweep(CascadePolicy<Input> policy, std::span<const Sensitivity> s1_grid,
                  std::span<const Sensitivity> s2_grid, std::span<const Input> data) {
  if (s1_grid.empty() || s2_grid.empty()) throw DomainError("sensitivity grids must be non-empty");
  SweepResult r;
  for (auto s : s1_grid) r.s1.push_back(s.value());
  for (auto s : s2_grid) r.s2.push_back(s.value());
  for (std::size_t i = 0; i < s1_grid.size(); ++i) {
    r.cells.emplace_back();
    for (std::size_t j = 0; j < s2_grid.size(); ++j) {
      policy.exit1.sensitivity = s1_grid[i];
      policy.exit2.sensitivity = s2_grid[j];
      const std::string where = " (at s1=" + textio::format_real(r.s1[i]) +
                                ", s2=" + textio::format_real(r.s2[j]) + ")";
      try {
        r.cells.back().push_back(evaluate(policy, data));
      } catch (const DataError& e) {
        throw DataError(e.what() + where);
      } catch (const DomainError& e) {
        throw DomainError(e.what() + where);
      } catch (const NetworkError& e) {
        throw NetworkError(e.what() + where);
      }
    }
  }
  return r;
}

/// 0.0, step, 2*step, ..., 1.0 (the last point is exactly 1).
inline std::vector<Sensitivity> sensitivity_grid(std::size_t intervals = 10) {
  if (intervals == 0) throw DomainError("grid needs at least one interval");
  std::vector<Sensitivity> g;
  for (std::size_t i = 0; i <= intervals; ++i)
    g.emplace_back(static_cast<double>(i) / static_cast<double>(intervals));
  return g;
}

inline constexpr const char* kSweepHeader =
    "s1,s2,accuracy,offload_frac,exit1_frac,mean_cost,Tn1,Tn2,Sp,St";

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << kSweepHeader << '\n';
  for (std::size_t i = 0; i < r.s1.size(); ++i)
    for (std::size_t j = 0; j < r.s2.size(); ++j) {
      const Evaluation& e = r.cells[i][j];
      os << textio::format_real(r.s1[i]) << ',' << textio::format_real(r.s2[j]) << ','
         << textio::format_real(e.accuracy) << ',' << textio::format_real(e.offload_fraction) << ','
         << textio::format_real(e.exit1_fraction) << ',' << textio::format_real(e.mean_cost) << ','
         << e.tally.exit1_correct << ',' << e.tally.exit2_correct << ',' << e.tally.server_correct
         << ',' << e.tally.total << '\n';
    }
}

inline std::string sweep_to_csv(const SweepResult& r) {
  std::ostringstream os;
  write_sweep_csv(os, r);
  return os.str();
}

// ---- Bindings -------------------------------------------------------------

/// Exit predictors reading a two-exit client model.
inline std::function<LogitVector(const Sample&)> exit1_of(std::shared_ptr<const TwoExitModel> m) {
  return [m = std::move(m)](const Sample& s) { return m->exit1_logits(s.x); };
}
inline std::function<LogitVector(const Sample&)> exit2_of(std::shared_ptr<const TwoExitModel> m) {
  return [m = std::move(m)](const Sample& s) { return m->exit2_logits(s.x); };
}

/// In-process server model.
inline std::function<ServerReply(const Sample&)> server_model(std::shared_ptr<const MlpModel> m) {
  return [m = std::move(m)](const Sample& s) { return ServerReply::ok(softmax_t(m->forward(s.x), 1.0)); };
}

inline LogitVector replay_exit1(const ReplayRow& r) { return r.exit1; }
inline LogitVector replay_exit2(const ReplayRow& r) { return r.exit2; }

/// Server answers from the replay file's `server` column.
inline ServerReply replay_server(const ReplayRow& r) {
  if (!r.server) throw DataError("replay row " + std::to_string(r.id) + " has no server column");
  return ServerReply::ok(softmax_t(*r.server, 1.0));
}

/// Fails fast when a replay set cannot serve offloads.
inline void require_server_column(std::span<const ReplayRow> rows) {
  for (const auto& r : rows)
    if (!r.server) throw DataError("replay row " + std::to_string(r.id) + " has no server column");
}

}  // namespace cascadesplit
