#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace cs = cascadesplit;
using namespace testsupport;

namespace {

constexpr double kPreserve = 1e-6;

cs::MlpModel host(std::uint64_t seed) { return random_model({3, 5, 4, 6, 2}, seed); }

}  // namespace

TEST(Widen, PreservesFunctionAndGrows) {
  const auto xs = probes(1, 3, 50);
  const auto m = host(1);
  const auto w = cs::widen(m, 1, 8, 3);
  EXPECT_EQ(w.width(1), 8u);
  EXPECT_LT(sup_norm_gap(m, w, xs), kPreserve);
  EXPECT_GT(w.parameter_count(), m.parameter_count());
  const auto ww = cs::widen(w, 1, 11, 4);
  EXPECT_LT(sup_norm_gap(m, ww, xs), kPreserve);
}

TEST(Widen, ReplicasAreNotIdentical) {
  const auto m = random_model({2, 2, 2}, 5);
  const auto w = cs::widen(m, 1, 4, 9);
  // The copies share incoming weights but carry different outgoing shares.
  const auto& next = w.layers[1];
  bool differs = false;
  for (std::size_t c = 2; c < 4; ++c)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t src = 0; src < 2; ++src)
        if (w.layers[0].w(c, 0) == w.layers[0].w(src, 0) && next.w(o, c) != next.w(o, src)) differs = true;
  EXPECT_TRUE(differs);
}

TEST(Widen, RejectsBadTargets) {
  const auto m = host(2);
  EXPECT_THROW(cs::widen(m, 0, 9), cs::DomainError);
  EXPECT_THROW(cs::widen(m, 4, 9), cs::DomainError);
  EXPECT_THROW(cs::widen(m, 1, 5), cs::DomainError);
  EXPECT_THROW(cs::widen(m, 1, 3), cs::DomainError);
}

TEST(Deepen, PreservesFunctionAndAddsOneLayer) {
  const auto xs = probes(2, 3, 50);
  const auto m = host(3);
  for (std::size_t pos = 1; pos < m.depth(); ++pos) {
    const auto d = cs::deepen(m, pos);
    EXPECT_EQ(d.depth(), m.depth() + 1);
    EXPECT_LT(sup_norm_gap(m, d, xs), kPreserve);
    const auto dd = cs::deepen(d, pos);
    EXPECT_EQ(dd.depth(), m.depth() + 2);
    EXPECT_LT(sup_norm_gap(m, dd, xs), kPreserve);
  }
  EXPECT_THROW(cs::deepen(m, 0), cs::DomainError);
  EXPECT_THROW(cs::deepen(m, m.depth()), cs::DomainError);
}

TEST(Deepen, KeepsSkipEndpointsAttached) {
  const auto xs = probes(3, 3, 50);
  auto m = cs::add_skip(host(4), 1, 3);
  m.skips[0].weights.assign(m.skips[0].weights.size(), 0.3);
  const auto d = cs::deepen(m, 2);
  EXPECT_EQ(d.skips[0].src, 1u);
  EXPECT_EQ(d.skips[0].dst, 4u);
  EXPECT_LT(sup_norm_gap(m, d, xs), kPreserve);
}

TEST(AddSkip, ZeroInitializedAndValidated) {
  const auto xs = probes(4, 3, 50);
  const auto m = host(5);
  const auto s = cs::add_skip(m, 0, 2);
  EXPECT_EQ(s.skips.size(), m.skips.size() + 1);
  EXPECT_LT(sup_norm_gap(m, s, xs), kPreserve);
  EXPECT_THROW(cs::add_skip(s, 0, 2), cs::DomainError);
  EXPECT_THROW(cs::add_skip(m, 2, 1), cs::DomainError);
  EXPECT_THROW(cs::add_skip(m, 1, 1), cs::DomainError);
  EXPECT_THROW(cs::add_skip(m, 0, 9), cs::DomainError);
}

TEST(Morph, EveryKindPreservesFunctionOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto xs = probes(100 + seed, 3, 50);
    auto m = host(seed);
    // Give the host a trained-looking skip so widen/deepen must carry it.
    m = cs::add_skip(m, 1, 3);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (auto& w : m.skips[0].weights) w = u(rng);
    EXPECT_LT(sup_norm_gap(m, cs::widen(m, 1 + seed % 3, m.width(1 + seed % 3) + 1 + seed % 4, seed), xs), kPreserve);
    EXPECT_LT(sup_norm_gap(m, cs::deepen(m, 1 + seed % 3), xs), kPreserve);
    EXPECT_LT(sup_norm_gap(m, cs::add_skip(m, 0, 2 + seed % 3), xs), kPreserve);
  }
}

TEST(Morph, RandomCompositionsPreserveFunction) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto xs = probes(200 + seed, 3, 50);
    const auto m = host(seed + 50);
    std::mt19937_64 rng(seed);
    auto cur = m;
    const std::size_t ops = 1 + seed % 5;
    for (std::size_t k = 0; k < ops; ++k) {
      const auto op = cs::random_morph(cur, rng);
      const auto next = cs::apply_morph(cur, op);
      EXPECT_GE(next.parameter_count(), cur.parameter_count()) << op.describe();
      cur = next;
    }
    EXPECT_LT(sup_norm_gap(m, cur, xs), kPreserve) << "seed " << seed;
  }
}

TEST(Morph, RandomMorphNeedsAHiddenLayerOrFreeSkip) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(cs::random_morph(cs::make_mlp({2, 2}, 1), rng), cs::DomainError);
}
