#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lookalike/errors.hpp"
#include "lookalike/pair_binning.hpp"
#include "test_support.hpp"

namespace lookalike {
namespace {

using testing::random_set;

EmbeddingSet line_set(const std::vector<double>& xs) {
  std::vector<EmbeddingRecord> recs;
  for (std::size_t i = 0; i < xs.size(); ++i) recs.push_back({"x" + std::to_string(i), "id" + std::to_string(i), {xs[i]}});
  return EmbeddingSet(1, recs, false);
}

PairOfPairsTask make_task(const std::string& id, std::size_t bin_a, std::size_t bin_b) {
  return {id, {"a" + id, "b" + id, 0.0}, {"c" + id, "d" + id, 0.0}, bin_a, bin_b};
}

std::vector<PairVote> votes_for(const std::string& task_id, int for_a, int for_b) {
  std::vector<PairVote> v;
  for (int i = 0; i < for_a + for_b; ++i) {
    v.push_back({task_id, "w" + std::to_string(i), i < for_a ? PairChoice::A : PairChoice::B});
  }
  return v;
}

TEST(BinPairs, DistanceInsideFirstRange) {
  const auto set = line_set({0.0, 1.22});
  const std::vector<double> edges{1.2, 1.25, 1.3};
  const auto binned = bin_pairs(set, edges);
  ASSERT_EQ(binned.bin_count(), 2u);
  ASSERT_EQ(binned.bins[0].size(), 1u);
  EXPECT_TRUE(binned.bins[1].empty());
}

TEST(BinPairs, InteriorEdgeGoesToUpperBin) {
  const auto set = line_set({0.0, 1.25});
  const std::vector<double> edges{1.2, 1.25, 1.3};
  const auto binned = bin_pairs(set, edges);
  EXPECT_TRUE(binned.bins[0].empty());
  EXPECT_EQ(binned.bins[1].size(), 1u);
}

TEST(BinPairs, OutOfRangeAndSameIdentityDropped) {
  std::vector<EmbeddingRecord> recs{{"a", "p", {0.0}}, {"b", "p", {1.22}}, {"c", "q", {5.0}}};
  const EmbeddingSet set(1, recs, false);
  const std::vector<double> edges{1.2, 1.25};
  const auto binned = bin_pairs(set, edges);
  EXPECT_TRUE(binned.bins[0].empty());
}

TEST(BinPairs, MatchesExhaustiveScan) {
  const auto set = random_set(20, 3, 20, 4);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.2, 1.9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> edges(5);
    for (double& e : edges) e = u(rng);
    std::sort(edges.begin(), edges.end());
    const auto binned = bin_pairs(set, edges);
    std::vector<std::multiset<std::pair<std::string, std::string>>> expected(4);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = i + 1; j < 20; ++j) {
        double sq = 0;
        for (int c = 0; c < 3; ++c) sq += std::pow(set[i].vector[c] - set[j].vector[c], 2);
        const double d = std::sqrt(sq);
        for (std::size_t b = 0; b < 4; ++b)
          if (d >= edges[b] && d < edges[b + 1]) expected[b].insert({set[i].item_id, set[j].item_id});
      }
    for (std::size_t b = 0; b < 4; ++b) {
      std::multiset<std::pair<std::string, std::string>> got;
      for (const auto& p : binned.bins[b]) got.insert({p.first, p.second});
      EXPECT_EQ(got, expected[b]) << "bin " << b;
    }
  }
}

TEST(BinPairs, RejectsBadEdges) {
  const auto set = line_set({0.0, 1.0});
  EXPECT_THROW(bin_pairs(set, std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(bin_pairs(set, std::vector<double>{1.0, 1.0}), ValidationError);
  EXPECT_THROW(bin_pairs(set, std::vector<double>{2.0, 1.0}), ValidationError);
}

TEST(QuantileEdges, EveryPairLandsInABin) {
  const auto set = random_set(40, 8, 20, 6);
  const auto edges = quantile_edges(set, 10);
  ASSERT_EQ(edges.size(), 11u);
  const auto binned = bin_pairs(set, edges);
  std::size_t total = 0, cross = 0;
  for (const auto& b : binned.bins) {
    total += b.size();
    EXPECT_GT(b.size(), 0u);
  }
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j) cross += set[i].identity != set[j].identity;
  EXPECT_EQ(total, cross);
}

TEST(BuildPairTasks, TenBinsHundredPerCellGives4500) {
  const auto set = random_set(60, 8, 60, 10);
  const auto binned = bin_pairs(set, quantile_edges(set, 10));
  const auto tasks = build_pair_comparison_tasks(binned, 100, 1);
  EXPECT_EQ(tasks.size(), 4500u);
  std::map<std::pair<std::size_t, std::size_t>, int> cells;
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    ++cells[std::minmax(t.bin_a, t.bin_b)];
    ids.insert(t.task_id);
    EXPECT_NE(t.bin_a, t.bin_b);
  }
  EXPECT_EQ(cells.size(), 45u);
  for (const auto& [cell, n] : cells) EXPECT_EQ(n, 100);
  EXPECT_EQ(ids.size(), tasks.size());
}

TEST(BuildPairTasks, SmallestInstanceAndDeterminism) {
  const auto set = line_set({0.0, 1.0, 3.0, 7.0});
  const std::vector<double> edges{0.5, 2.5, 10.0};
  const auto binned = bin_pairs(set, edges);
  const auto tasks = build_pair_comparison_tasks(binned, 1, 3);
  ASSERT_EQ(tasks.size(), 1u);
  const auto again = build_pair_comparison_tasks(binned, 1, 3);
  EXPECT_EQ(again[0].pair_a, tasks[0].pair_a);
  EXPECT_EQ(again[0].pair_b, tasks[0].pair_b);
}

TEST(BuildPairTasks, NoReplacementWithinCell) {
  const auto set = random_set(30, 4, 30, 12);
  const auto binned = bin_pairs(set, quantile_edges(set, 3));
  const auto tasks = build_pair_comparison_tasks(binned, 200, 5);
  std::set<std::pair<std::pair<std::string, std::string>, std::pair<std::string, std::string>>> seen;
  for (const auto& t : tasks) {
    auto a = std::make_pair(t.pair_a.first, t.pair_a.second);
    auto b = std::make_pair(t.pair_b.first, t.pair_b.second);
    if (t.bin_a > t.bin_b) std::swap(a, b);
    EXPECT_TRUE(seen.insert({a, b}).second);
  }
}

TEST(BuildPairTasks, ShortfallWhenCellTooSmall) {
  const auto set = line_set({0.0, 1.0, 3.0});
  const std::vector<double> edges{0.5, 2.5, 10.0};
  EXPECT_THROW(build_pair_comparison_tasks(bin_pairs(set, edges), 5, 1), ShortfallError);
}

TEST(AggregateVotes, EightOfTenMeetsThreshold) {
  const std::vector<PairOfPairsTask> tasks{make_task("t", 0, 1)};
  const auto m = aggregate_pair_votes(tasks, votes_for("t", 8, 2), 0.8, {0.0, 1.0, 2.0});
  EXPECT_EQ(m(0, 1), 1);
  EXPECT_EQ(m(1, 0), 0);
  const std::vector<PairOfPairsTask> flipped{make_task("t", 1, 0)};
  const auto f = aggregate_pair_votes(flipped, votes_for("t", 2, 8), 0.8, {0.0, 1.0, 2.0});
  EXPECT_EQ(f(0, 1), 1);
}

TEST(AggregateVotes, SevenOfTenIgnored) {
  const std::vector<PairOfPairsTask> tasks{make_task("t", 0, 1)};
  const auto m = aggregate_pair_votes(tasks, votes_for("t", 7, 3), 0.8, {0.0, 1.0, 2.0});
  EXPECT_EQ(m(0, 1) + m(1, 0), 0);
}

TEST(AggregateVotes, BareMajorityThresholdCountsUnanimousTasks) {
  std::vector<PairOfPairsTask> tasks;
  std::vector<PairVote> votes;
  for (int i = 0; i < 6; ++i) {
    const std::string id = "t" + std::to_string(i);
    tasks.push_back(make_task(id, i % 3, (i + 1) % 3));
    auto v = votes_for(id, i % 2 ? 10 : 0, i % 2 ? 0 : 10);
    votes.insert(votes.end(), v.begin(), v.end());
  }
  const auto m = aggregate_pair_votes(tasks, votes, 0.5 + 1e-9, {0.0, 1.0, 2.0, 3.0});
  std::int64_t total = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) total += m(i, j);
  EXPECT_EQ(total, 6);
}

TEST(AggregateVotes, RejectsBadInput) {
  const std::vector<PairOfPairsTask> tasks{make_task("t", 0, 1)};
  EXPECT_THROW(aggregate_pair_votes(tasks, votes_for("t", 5, 5), 0.5, {0.0, 1.0, 2.0}), ValidationError);
  EXPECT_THROW(aggregate_pair_votes(tasks, votes_for("nope", 1, 0), 0.8, {0.0, 1.0, 2.0}), ValidationError);
  EXPECT_THROW(aggregate_pair_votes(tasks, {}, 0.8, {0.0, 1.0, 2.0}), ValidationError);
  auto dup = votes_for("t", 1, 0);
  dup.push_back(dup.front());
  EXPECT_THROW(aggregate_pair_votes(tasks, dup, 0.8, {0.0, 1.0, 2.0}), ValidationError);
}

// Random tasks over `n_bins` with random vote splits.
struct Fuzzed {
  std::vector<PairOfPairsTask> tasks;
  std::vector<PairVote> votes;
  std::vector<double> edges;
};

Fuzzed fuzz(std::mt19937_64& rng, std::size_t n_bins) {
  Fuzzed f;
  for (std::size_t i = 0; i <= n_bins; ++i) f.edges.push_back(static_cast<double>(i));
  std::uniform_int_distribution<std::size_t> bin(0, n_bins - 1), per(1, 6), voters(1, 10);
  std::size_t id = 0;
  for (std::size_t i = 0; i < n_bins; ++i)
    for (std::size_t j = i + 1; j < n_bins; ++j) {
      const std::size_t count = per(rng);
      for (std::size_t k = 0; k < count; ++k) {
        const std::string tid = "t" + std::to_string(id++);
        f.tasks.push_back(rng() % 2 ? make_task(tid, i, j) : make_task(tid, j, i));
        const int n = static_cast<int>(voters(rng));
        const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(n + 1));
        auto v = votes_for(tid, a, n - a);
        f.votes.insert(f.votes.end(), v.begin(), v.end());
      }
    }
  return f;
}

TEST(AggregateVotes, CellPairNeverExceedsTasksPerCell) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const auto f = fuzz(rng, 2 + trial % 5);
    const auto m = aggregate_pair_votes(f.tasks, f.votes, 0.6, f.edges);
    for (std::size_t i = 0; i < m.bin_count(); ++i) {
      EXPECT_EQ(m(i, i), 0);
      for (std::size_t j = 0; j < m.bin_count(); ++j)
        EXPECT_LE(m(i, j) + m(j, i), static_cast<std::int64_t>(m.tasks_per_cell()));
    }
  }
}

TEST(AggregateVotes, RaisingThresholdNeverIncreasesCells) {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = fuzz(rng, 4);
    const auto m6 = aggregate_pair_votes(f.tasks, f.votes, 0.6, f.edges);
    const auto m8 = aggregate_pair_votes(f.tasks, f.votes, 0.8, f.edges);
    const auto m10 = aggregate_pair_votes(f.tasks, f.votes, 1.0, f.edges);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_LE(m8(i, j), m6(i, j));
        EXPECT_LE(m10(i, j), m8(i, j));
      }
  }
}

TEST(TriangleAccuracy, ReproducesReportedShare) {
  BinMatrix m({0.0, 1.0, 2.0}, 10000);
  m.at(0, 1) = 6643;
  m.at(1, 0) = 3357;
  const std::vector<std::size_t> all{0, 1};
  EXPECT_NEAR(triangle_accuracy(m, all), 0.6643, 1e-12);
}

TEST(TriangleAccuracy, EmptyLowerTriangleIsPerfect) {
  BinMatrix m({0.0, 1.0, 2.0, 3.0}, 5);
  m.at(0, 1) = 3;
  m.at(1, 2) = 5;
  m.at(0, 2) = 1;
  const std::vector<std::size_t> all{0, 1, 2};
  EXPECT_DOUBLE_EQ(triangle_accuracy(m, all), 1.0);
}

TEST(TriangleAccuracy, MatchesDoubleLoopOracleAndComplement) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    BinMatrix m({0.0, 1.0, 2.0, 3.0, 4.0}, 100);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) m.at(i, j) = static_cast<std::int64_t>(rng() % 50) + 1;
    const std::vector<std::size_t> subset{0, 2, 3};
    double upper = 0, lower = 0;
    for (std::size_t i : subset)
      for (std::size_t j : subset) {
        if (i < j) upper += static_cast<double>(m(i, j));
        if (i > j) lower += static_cast<double>(m(i, j));
      }
    EXPECT_NEAR(triangle_accuracy(m, subset), upper / (upper + lower), 1e-15);
    EXPECT_NEAR(triangle_accuracy(m, subset) + triangle_accuracy(m.transposed(), subset), 1.0, 1e-12);
  }
}

TEST(TriangleAccuracy, UndefinedWithoutCounts) {
  BinMatrix m({0.0, 1.0, 2.0}, 1);
  const std::vector<std::size_t> all{0, 1};
  EXPECT_THROW(triangle_accuracy(m, all), UndefinedMetricError);
  const std::vector<std::size_t> one{0};
  EXPECT_THROW(triangle_accuracy(m, one), ValidationError);
}

TEST(PairFiles, RoundTripAndCsvHeader) {
  testing::TempDir dir;
  const auto set = random_set(20, 4, 20, 2);
  const auto edges = quantile_edges(set, 3);
  const auto tasks = build_pair_comparison_tasks(bin_pairs(set, edges), 4, 9);
  save_pair_tasks(tasks, dir / "t.jsonl");
  const auto back = load_pair_tasks(dir / "t.jsonl");
  ASSERT_EQ(back.size(), tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_EQ(back[i].task_id, tasks[i].task_id);
    EXPECT_EQ(back[i].pair_a.first, tasks[i].pair_a.first);
    EXPECT_EQ(back[i].bin_b, tasks[i].bin_b);
  }
  std::vector<PairVote> votes;
  for (const auto& t : tasks) {
    auto v = votes_for(t.task_id, 9, 1);
    votes.insert(votes.end(), v.begin(), v.end());
  }
  save_pair_votes(votes, dir / "v.jsonl");
  const auto vback = load_pair_votes(dir / "v.jsonl");
  ASSERT_EQ(vback.size(), votes.size());
  EXPECT_EQ(vback[0].choice, PairChoice::A);
  EXPECT_EQ(vback[9].choice, PairChoice::B);

  const auto m = aggregate_pair_votes(tasks, votes, 0.8, edges);
  write_bin_matrix_csv(m, dir / "m.csv");
  const auto csv = testing::read_text(dir / "m.csv");
  EXPECT_EQ(csv.rfind("bin_upper,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

}  // namespace
}  // namespace lookalike
