#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "support.hpp"

namespace cs = cascadesplit;
using namespace testsupport;

namespace {

using Row = cs::ReplayRow;

// Stub predictor/certainty pair: the certainty is read from logit slot 0 of
// a fixed table indexed by sample id, independent of meta features.
cs::CascadePolicy<Row> stub_policy(double c1, double c2, double s1, double s2) {
  cs::CascadePolicy<Row> p;
  p.exit1 = {cs::replay_exit1, [c1](const cs::MetaFeatures&) { return c1; }, cs::Sensitivity(s1)};
  p.exit2 = {cs::replay_exit2, [c2](const cs::MetaFeatures&) { return c2; }, cs::Sensitivity(s2)};
  p.server = {cs::replay_server, cs::FallbackPolicy::UseLocalPrediction};
  return p;
}

Row one_row() { return Row{0, 1, {0.1, 2.0, 0.0}, {0.0, 0.0, 3.0}, cs::LogitVector{0.0, 5.0, 0.0}}; }

// Replay set of a weak exit 1, a better exit 2 and a strong server.
std::vector<Row> synthetic_replay(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> cls(0, 3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < n; ++i) {
    Row r;
    r.id = i;
    r.label = cls(rng);
    r.exit1.resize(4);
    r.exit2.resize(4);
    r.server = cs::LogitVector(4);
    for (std::size_t k = 0; k < 4; ++k) {
      const double hit = k == r.label ? 1.0 : 0.0;
      r.exit1[k] = g(rng) + 1.0 * hit;
      r.exit2[k] = g(rng) + 1.8 * hit;
      (*r.server)[k] = g(rng) + 3.5 * hit;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::shared_ptr<const cs::DecisionUnit> du_for(const std::vector<Row>& rows, bool second, std::uint64_t seed) {
  std::vector<cs::DuSample> s;
  for (const auto& r : rows) {
    const auto p = cs::softmax_t(second ? r.exit2 : r.exit1, 1.0);
    s.push_back({cs::extract_meta(p), p.predicted_class() == r.label});
  }
  cs::DuTrainConfig c;
  c.epochs = 20;
  c.seed = seed;
  return std::make_shared<const cs::DecisionUnit>(cs::train_decision_unit(s, c));
}

struct Fixture {
  std::vector<Row> validation = synthetic_replay(300, 1);
  std::vector<Row> test = synthetic_replay(200, 2);
  std::shared_ptr<const cs::DecisionUnit> du1 = du_for(validation, false, 3);
  std::shared_ptr<const cs::DecisionUnit> du2 = du_for(validation, true, 4);

  cs::CascadePolicy<Row> policy(double s1, double s2) const {
    cs::RunConfig cfg;
    cfg.s1 = s1;
    cfg.s2 = s2;
    return cs::replay_policy(cfg, du1, du2);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// Independent re-simulation of one evaluation: gates applied by hand.
cs::RoutingTally oracle(const Fixture& f, double s1, double s2) {
  const auto escalate = [](double c, double s) { return s >= 1.0 || c < s; };
  const cs::CostModel costs;
  cs::RoutingTally t;
  for (const auto& r : f.test) {
    ++t.total;
    const auto p1 = cs::softmax_t(r.exit1, 1.0);
    t.compute_cost += costs.exit1;
    if (!escalate(cs::certainty(*f.du1, cs::extract_meta(p1)), s1)) {
      ++t.exit1;
      t.exit1_correct += cs::argmax(r.exit1) == r.label;
      continue;
    }
    const auto p2 = cs::softmax_t(r.exit2, 1.0);
    t.compute_cost += costs.exit2 - costs.exit1;
    if (!escalate(cs::certainty(*f.du2, cs::extract_meta(p2)), s2)) {
      ++t.exit2;
      t.exit2_correct += cs::argmax(r.exit2) == r.label;
      continue;
    }
    ++t.server;
    t.communication_cost += costs.communication;
    t.server_correct += cs::argmax(*r.server) == r.label;
  }
  return t;
}

double standalone(const std::vector<Row>& rows, const cs::LogitVector& (*col)(const Row&)) {
  std::size_t hits = 0;
  for (const auto& r : rows) hits += cs::argmax(col(r)) == r.label;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace

TEST(RouteSample, StubbedGateExamples) {
  const cs::CostModel c;
  auto o = cs::route_sample(stub_policy(0.9, 0.0, 0.5, 0.5), one_row());
  EXPECT_EQ(o.destination, cs::Destination::Exit1);
  EXPECT_EQ(o.predicted, 1u);
  EXPECT_EQ(o.cost(), c.exit1);
  EXPECT_EQ(o.certainties.size(), 1u);

  o = cs::route_sample(stub_policy(0.2, 0.9, 0.5, 0.5), one_row());
  EXPECT_EQ(o.destination, cs::Destination::Exit2);
  EXPECT_EQ(o.predicted, 2u);
  EXPECT_EQ(o.cost(), c.exit2);
  EXPECT_EQ(o.certainties.size(), 2u);

  o = cs::route_sample(stub_policy(0.2, 0.2, 0.5, 0.5), one_row());
  EXPECT_EQ(o.destination, cs::Destination::Server);
  EXPECT_EQ(o.predicted, 1u);
  EXPECT_EQ(o.cost(), c.exit2 + c.communication);
}

TEST(RouteSample, ExitOneDisabledSkipsFirstGate) {
  auto p = stub_policy(0.0, 0.9, 1.0, 0.5);
  p.exit1_enabled = false;
  const auto o = cs::route_sample(p, one_row());
  EXPECT_EQ(o.destination, cs::Destination::Exit2);
  EXPECT_EQ(o.certainties.size(), 1u);
}

TEST(RoutingTally, AccuracyIsEquationSeven) {
  cs::RoutingTally t;
  t.exit1_correct = 2;
  t.exit2_correct = 4;
  t.server_correct = 3;
  t.total = 10;
  EXPECT_DOUBLE_EQ(t.accuracy(), 0.9);
}

TEST(Evaluate, EmptyDatasetIsDomainError) {
  EXPECT_THROW(cs::evaluate(stub_policy(1, 1, 0, 0), std::span<const Row>{}), cs::DomainError);
}

TEST(Evaluate, MatchesBruteForceOracleAcrossGrid) {
  const auto& f = fixture();
  const auto grid = cs::sensitivity_grid(4);
  for (const auto& s1 : grid)
    for (const auto& s2 : grid) {
      std::vector<cs::RoutingOutcome> outs;
      const auto e = cs::evaluate(f.policy(s1.value(), s2.value()), std::span<const Row>(f.test), &outs);
      const auto want = oracle(f, s1.value(), s2.value());
      EXPECT_EQ(e.tally.exit1, want.exit1);
      EXPECT_EQ(e.tally.exit2, want.exit2);
      EXPECT_EQ(e.tally.server, want.server);
      EXPECT_EQ(e.tally.exit1_correct, want.exit1_correct);
      EXPECT_EQ(e.tally.exit2_correct, want.exit2_correct);
      EXPECT_EQ(e.tally.server_correct, want.server_correct);
      EXPECT_EQ(e.tally.exit1 + e.tally.exit2 + e.tally.server + e.tally.fallback, e.tally.total);
      EXPECT_EQ(e.tally.total, f.test.size());
      // Accuracy equals the mean of the per-sample hit indicator.
      std::size_t hits = 0;
      double cost = 0;
      for (std::size_t i = 0; i < outs.size(); ++i) {
        hits += outs[i].predicted == f.test[i].label;
        cost += outs[i].cost();
        if (outs[i].destination == cs::Destination::Exit1) {
          EXPECT_EQ(outs[i].cost(), 38.0);
        }
      }
      EXPECT_EQ(e.accuracy, static_cast<double>(hits) / static_cast<double>(f.test.size()));
      EXPECT_EQ(e.tally.compute_cost + e.tally.communication_cost, cost);
      EXPECT_DOUBLE_EQ(e.mean_cost * static_cast<double>(f.test.size()), cost);
    }
}

TEST(Evaluate, EndpointIdentities) {
  const auto& f = fixture();
  const std::span<const Row> rows(f.test);
  const auto local = cs::evaluate(f.policy(0.0, 0.0), rows);
  EXPECT_EQ(local.tally.exit1, rows.size());
  EXPECT_EQ(local.offload_fraction, 0.0);
  EXPECT_EQ(local.accuracy, standalone(f.test, [](const Row& r) -> const cs::LogitVector& { return r.exit1; }));
  const auto remote = cs::evaluate(f.policy(1.0, 1.0), rows);
  EXPECT_EQ(remote.tally.server, rows.size());
  EXPECT_EQ(remote.offload_fraction, 1.0);
  EXPECT_EQ(remote.accuracy, standalone(f.test, [](const Row& r) -> const cs::LogitVector& { return *r.server; }));
  const auto second = cs::evaluate(f.policy(1.0, 0.0), rows);
  EXPECT_EQ(second.tally.exit2, rows.size());
  EXPECT_EQ(second.accuracy, standalone(f.test, [](const Row& r) -> const cs::LogitVector& { return r.exit2; }));
}

TEST(Evaluate, TwoStageAccountingWithExitOneDisabled) {
  const auto& f = fixture();
  auto p = f.policy(0.0, 0.5);
  p.exit1_enabled = false;
  const auto e = cs::evaluate(p, std::span<const Row>(f.test));
  EXPECT_EQ(e.tally.exit1, 0u);
  EXPECT_EQ(e.tally.exit2 + e.tally.server, f.test.size());
  EXPECT_EQ(e.accuracy, static_cast<double>(e.tally.exit2_correct + e.tally.server_correct) /
                            static_cast<double>(f.test.size()));
}

TEST(Sweep, MonotoneCountsAndCellsMatchEvaluate) {
  const auto& f = fixture();
  const auto grid = cs::sensitivity_grid(10);
  const std::span<const Row> rows(f.test);
  const auto r = cs::sweep(f.policy(0, 0), grid, grid, rows);
  ASSERT_EQ(r.cells.size(), 11u);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto& e = r.cells[i][j];
      if (j > 0) {
        EXPECT_GE(e.offload_fraction, r.cells[i][j - 1].offload_fraction);
      }
      if (i > 0) {
        EXPECT_LE(e.exit1_fraction, r.cells[i - 1][j].exit1_fraction);
      }
    }
  const std::vector<cs::Sensitivity> one{cs::Sensitivity(0.3)}, two{cs::Sensitivity(0.7)};
  const auto single = cs::sweep(f.policy(0, 0), one, two, rows);
  EXPECT_EQ(single.cells[0][0].tally, cs::evaluate(f.policy(0.3, 0.7), rows).tally);
}

TEST(Sweep, CsvHeaderAndRowCount) {
  const auto& f = fixture();
  const auto grid = cs::sensitivity_grid(4);
  const auto csv = cs::sweep_to_csv(cs::sweep(f.policy(0, 0), grid, grid, std::span<const Row>(f.test)));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "s1,s2,accuracy,offload_frac,exit1_frac,mean_cost,Tn1,Tn2,Sp,St");
  EXPECT_EQ(cs::parse_sweep_csv(csv).size(), 25u);
}

TEST(Sweep, ErrorsCarryGridCoordinates) {
  auto rows = fixture().test;
  rows[5].server.reset();
  const std::vector<cs::Sensitivity> g{cs::Sensitivity(1.0)};
  try {
    cs::sweep(fixture().policy(0, 0), g, g, std::span<const Row>(rows));
    FAIL();
  } catch (const cs::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("s1=1"), std::string::npos) << e.what();
  }
}

TEST(Replay, SameFileSamePolicyGivesIdenticalTally) {
  const auto& f = fixture();
  const auto text = cs::replay_to_string(f.test);
  const auto a = cs::parse_replay(text);
  const auto b = cs::parse_replay(text);
  const auto p = f.policy(0.6, 0.4);
  EXPECT_EQ(cs::evaluate(p, std::span<const Row>(a)).tally, cs::evaluate(p, std::span<const Row>(b)).tally);
  EXPECT_EQ(cs::evaluate(p, std::span<const Row>(a)).tally, cs::evaluate(p, std::span<const Row>(f.test)).tally);
}

TEST(Replay, MissingServerColumnFailsFast) {
  auto rows = fixture().test;
  rows.back().server.reset();
  EXPECT_THROW(cs::require_server_column(rows), cs::DataError);
  EXPECT_THROW(cs::evaluate(fixture().policy(1.0, 1.0), std::span<const Row>(rows)), cs::DataError);
}

TEST(Fallback, UseLocalAndFailSample) {
  const auto& f = fixture();
  auto p = f.policy(1.0, 1.0);
  p.server.classify = [](const Row&) { return cs::ServerReply::failed("down"); };
  const std::span<const Row> rows(f.test);
  const auto local = cs::evaluate(p, rows);
  EXPECT_EQ(local.tally.fallback, rows.size());
  EXPECT_EQ(local.tally.total, rows.size());
  EXPECT_EQ(local.accuracy, standalone(f.test, [](const Row& r) -> const cs::LogitVector& { return r.exit2; }));
  p.server.fallback = cs::FallbackPolicy::FailSample;
  auto q = f.policy(0.5, 1.0);
  q.server = p.server;
  const auto failed = cs::evaluate(q, rows);
  EXPECT_EQ(failed.tally.failed, failed.tally.attempted() - failed.tally.total);
  EXPECT_EQ(failed.tally.total, failed.tally.exit1 + failed.tally.exit2);
  EXPECT_EQ(failed.accuracy, static_cast<double>(failed.tally.exit1_correct) / static_cast<double>(failed.tally.total));
}
