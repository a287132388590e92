#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "support.hpp"

namespace cs = cascadesplit;
using namespace testsupport;

namespace {

std::multiset<std::string> keys(const cs::Dataset& d) {
  std::multiset<std::string> out;
  for (const auto& s : d) out.insert(cs::dataset_to_string({s}));
  return out;
}

}  // namespace

TEST(Synthetic, DeterministicAndHonoursCounts) {
  cs::SyntheticSpec s;
  s.classes = 3;
  s.samples_per_class = {50, 7, 120};
  s.input_dim = 5;
  s.seed = 4;
  const auto a = cs::gen_synthetic(s);
  const auto b = cs::gen_synthetic(s);
  EXPECT_EQ(cs::dataset_to_string(a), cs::dataset_to_string(b));
  std::map<std::size_t, std::size_t> counts;
  for (const auto& x : a) {
    ++counts[x.label];
    EXPECT_EQ(x.x.size(), 5u);
  }
  EXPECT_EQ(counts[0], 50u);
  EXPECT_EQ(counts[1], 7u);
  EXPECT_EQ(counts[2], 120u);
  s.seed = 5;
  EXPECT_NE(cs::dataset_to_string(cs::gen_synthetic(s)), cs::dataset_to_string(a));
}

TEST(Synthetic, RejectsInvalidSpecs) {
  cs::SyntheticSpec s;
  s.classes = 1;
  s.samples_per_class = {10};
  EXPECT_THROW(cs::gen_synthetic(s), cs::DomainError);
  s = {};
  s.samples_per_class = {10, 0};
  EXPECT_THROW(cs::gen_synthetic(s), cs::DomainError);
  s = {};
  s.separation = 0.0;
  EXPECT_THROW(cs::gen_synthetic(s), cs::DomainError);
}

TEST(Synthetic, WideSeparationIsLearnable) {
  const auto splits = cs::split(blobs(2, 300, 3, 10.0, 6), {}, 7);
  cs::TrainConfig tc;
  tc.epochs = 20;
  const auto m = cs::train(cs::make_mlp({3, 8, 2}, 1), splits.train, tc).model;
  EXPECT_GE(cs::accuracy(m, splits.test), 0.99);
}

TEST(Split, SizesFollowFloorRule) {
  const auto data = blobs(2, 50, 2, 3.0, 1);
  const auto s = cs::split(data, {}, 3);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  const auto odd = cs::split(blobs(2, 53, 2, 3.0, 1), {}, 3);
  EXPECT_EQ(odd.validation.size(), 10u);
  EXPECT_EQ(odd.test.size(), 10u);
  EXPECT_EQ(odd.train.size(), 86u);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  const auto data = blobs(3, 40, 2, 3.0, 2);
  const auto a = cs::split(data, {}, 9);
  const auto b = cs::split(data, {}, 9);
  EXPECT_EQ(cs::dataset_to_string(a.train), cs::dataset_to_string(b.train));
  EXPECT_EQ(cs::dataset_to_string(a.test), cs::dataset_to_string(b.test));
  auto all = keys(a.train);
  for (const auto& k : keys(a.validation)) all.insert(k);
  for (const auto& k : keys(a.test)) all.insert(k);
  EXPECT_EQ(all, keys(data));
}

TEST(Split, Errors) {
  const auto data = blobs(2, 2, 2, 3.0, 2);
  EXPECT_THROW(cs::split(data, {}, 1), cs::DomainError);
  EXPECT_THROW(cs::split(blobs(2, 50, 2, 3.0, 1), {0.5, 0.1, 0.1}, 1), cs::DomainError);
  EXPECT_TRUE(cs::split({}, {}, 1).train.empty());
}

TEST(DatasetFile, RoundTripAndLineNumbers) {
  const auto data = blobs(2, 10, 3, 3.0, 2);
  const auto back = cs::parse_dataset(cs::dataset_to_string(data));
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].x, data[i].x);
    EXPECT_EQ(back[i].label, data[i].label);
  }
  try {
    cs::parse_dataset("{\"id\":0,\"x\":[1,2],\"label\":0}\n{\"id\":1,\"x\":[1],\"label\":0}\n");
    FAIL();
  } catch (const cs::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(ReplayFile, RoundTripIsLossless) {
  std::vector<cs::ReplayRow> rows{{0, 1, {0.1, 1.0 / 3.0, -2.5e-300}, {1e300, 0, -1}, cs::LogitVector{3, 2, 1}},
                                  {7, 2, {0.5, 0.25, 0.125}, {-0.0, 4, 5}, std::nullopt}};
  const auto path = std::filesystem::temp_directory_path() / "cascadesplit-replay-test.jsonl";
  cs::save_replay(rows, path.string());
  EXPECT_EQ(cs::load_replay(path.string()), rows);
  std::filesystem::remove(path);
}

TEST(ReplayFile, RejectsInconsistentClassCounts) {
  const std::string mixed = "{\"id\":0,\"label\":0,\"exit1\":[1,2,3],\"exit2\":[1,2,3],\"server\":[1,2,3,4]}\n";
  EXPECT_THROW(cs::parse_replay(mixed), cs::DataError);
  const std::string across =
      "{\"id\":0,\"label\":0,\"exit1\":[1,2,3],\"exit2\":[1,2,3]}\n"
      "{\"id\":1,\"label\":0,\"exit1\":[1,2,3,4],\"exit2\":[1,2,3,4]}\n";
  try {
    cs::parse_replay(across);
    FAIL();
  } catch (const cs::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(cs::parse_replay("{\"id\":0,\"label\":5,\"exit1\":[1,2],\"exit2\":[1,2]}\n"), cs::DataError);
  EXPECT_THROW(cs::parse_replay("garbage\n"), cs::DataError);
}

TEST(ReplayFile, MissingServerColumnAcceptedThenRejectedByCascade) {
  const auto rows = cs::parse_replay("{\"id\":0,\"label\":0,\"exit1\":[1,2],\"exit2\":[1,2]}\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].server.has_value());
  EXPECT_THROW(cs::require_server_column(rows), cs::DataError);
}
