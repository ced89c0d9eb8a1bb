#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lookalike/annotation.hpp"
#include "lookalike/errors.hpp"
#include "lookalike/synthetic.hpp"
#include "lookalike/task_builder.hpp"
#include "test_support.hpp"

namespace lookalike {
namespace {

TEST(GenEmbeddings, SizeIdentitiesAndDeterminism) {
  const auto set = gen_embeddings(10, 4, 10, 1);
  ASSERT_EQ(set.size(), 10u);
  std::set<std::string> ids;
  for (const auto& r : set.records()) {
    ids.insert(r.identity);
    double s = 0;
    for (double x : r.vector) s += x * x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(ids.size(), 10u);
  const auto again = gen_embeddings(10, 4, 10, 1);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(again[i].vector, set[i].vector);
  EXPECT_NE(gen_embeddings(10, 4, 10, 2)[0].vector, set[0].vector);
  EXPECT_EQ(gen_embeddings(6, 2, 3, 0)[4].identity, gen_embeddings(6, 2, 3, 0)[1].identity);
  EXPECT_THROW(gen_embeddings(3, 4, 5, 0), ValidationError);
  EXPECT_THROW(gen_embeddings(3, 0, 1, 0), ValidationError);
}

TEST(GenEmbeddings, HighDimensionalDistancesConcentrateNearSqrtTwo) {
  const auto set = gen_embeddings(1000, 256, 1000, 3);
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i + 1 < set.size(); i += 2) {
    sum += euclidean_distance(set[i].vector, set[i + 1].vector);
    ++n;
  }
  EXPECT_NEAR(sum / n, std::sqrt(2.0), 0.05 * std::sqrt(2.0));
}

TEST(GroundTruthMetric, FullRankAndUnitScale) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = GroundTruthMetric::random(16, 4, seed);
    EXPECT_EQ(matrix_rank(m.transform, 4, 16), 4u);
    for (double x : m.transform) EXPECT_TRUE(std::isfinite(x));
  }
  const auto sq = GroundTruthMetric::random(32, 32, 1);
  const auto set = gen_embeddings(200, 32, 200, 1);
  double ratio = 0;
  for (std::size_t i = 0; i + 1 < set.size(); ++i)
    ratio += sq.distance(set[i].vector, set[i + 1].vector) / euclidean_distance(set[i].vector, set[i + 1].vector);
  EXPECT_NEAR(ratio / 199.0, 1.0, 0.2);
}

TEST(MatrixRank, KnownMatrices) {
  EXPECT_EQ(matrix_rank(std::vector<double>{1, 2, 2, 4}, 2, 2), 1u);
  EXPECT_EQ(matrix_rank(std::vector<double>{1, 0, 0, 1}, 2, 2), 2u);
  EXPECT_EQ(matrix_rank(std::vector<double>{0, 0, 0, 0, 0, 0}, 2, 3), 0u);
  EXPECT_EQ(matrix_rank(std::vector<double>{1, 2, 3, 2, 4, 6.000001}, 2, 3), 2u);
}

struct Scene {
  EmbeddingSet set = gen_embeddings(300, 8, 100, 4);
  GroundTruthMetric metric = GroundTruthMetric::random(8, 8, 4);
  std::vector<RankingTask> tasks = build_ranking_tasks(set, sample_queries(set, 120, 1), 6, 1);
};

TEST(SimulateWorkers, NoiselessWorkersAgreeWithTrueOrder) {
  Scene s;
  const auto workers = make_workers(5, 0.0, 2);
  for (const auto& t : s.tasks) {
    const auto& q = s.set.find(t.query_id).vector;
    const auto first = simulate_worker_ranking(t, s.set, s.metric, workers[0]);
    for (std::size_t i = 1; i < first.order.size(); ++i) {
      EXPECT_LE(s.metric.distance(q, s.set.find(first.order[i - 1]).vector),
                s.metric.distance(q, s.set.find(first.order[i]).vector));
    }
    for (const auto& w : workers) EXPECT_EQ(simulate_worker_ranking(t, s.set, s.metric, w).order, first.order);
  }
  const auto rankings = simulate_rankings(s.tasks, s.set, s.metric, workers);
  const auto triplets = extract_all_hard_triplets(s.tasks, rankings);
  EXPECT_EQ(triplets.size(), 15u * s.tasks.size());
  for (const auto& t : triplets) EXPECT_EQ(t.confidence, 1.0);
}

TEST(SimulateWorkers, IdentityMetricReproducesBaseNeighbourOrder) {
  Scene s;
  const auto worker = make_workers(1, 0.0, 0)[0];
  const auto id = GroundTruthMetric::identity(8);
  for (const auto& t : s.tasks) EXPECT_EQ(simulate_worker_ranking(t, s.set, id, worker).order, t.candidates);
}

TEST(SimulateWorkers, DeterministicPerWorkerAndTask) {
  Scene s;
  const auto workers = make_workers(3, 0.3, 9);
  EXPECT_EQ(simulate_worker_ranking(s.tasks[0], s.set, s.metric, workers[1]),
            simulate_worker_ranking(s.tasks[0], s.set, s.metric, workers[1]));
  EXPECT_THROW(make_workers(2, -1.0, 0), ValidationError);
  EXPECT_THROW(make_workers(2, NAN, 0), ValidationError);
}

TEST(SimulateWorkers, HugeNoiseGivesCoinFlipPreferences) {
  Scene s;
  const auto& t = s.tasks[0];
  const auto workers = make_workers(10000, 1e3, 17);
  std::size_t first_above_last = 0;
  for (const auto& w : workers) {
    const auto r = simulate_worker_ranking(t, s.set, s.metric, w);
    const auto pf = std::find(r.order.begin(), r.order.end(), t.candidates.front());
    const auto pl = std::find(r.order.begin(), r.order.end(), t.candidates.back());
    first_above_last += pf < pl;
  }
  const double rate = static_cast<double>(first_above_last) / 10000.0;
  // Binomial(10^4, 1/2) has sd 0.005; stay within 5 sd.
  EXPECT_NEAR(rate, 0.5, 0.025);
}

TEST(SimulateWorkers, ConfidenceFallsWithNoise) {
  Scene s;
  double previous = 2.0;
  for (double sigma : {0.0, 0.1, 1.0}) {
    const auto workers = make_workers(10, sigma, 5);
    const auto triplets = extract_all_hard_triplets(s.tasks, simulate_rankings(s.tasks, s.set, s.metric, workers));
    double sum = 0;
    for (const auto& t : triplets) sum += t.confidence;
    const double mean = sum / static_cast<double>(triplets.size());
    EXPECT_LE(mean, previous) << "sigma " << sigma;
    previous = mean;
  }
  EXPECT_LT(previous, 0.8);
}

TEST(SimulatePairVotes, NoiselessVotesFollowMetric) {
  Scene s;
  const PairOfPairsTask t{"pp", {s.set[0].item_id, s.set[1].item_id, 0}, {s.set[2].item_id, s.set[3].item_id, 0}, 0, 1};
  const auto votes = simulate_pair_votes(std::span<const PairOfPairsTask>(&t, 1), s.set, s.metric,
                                         make_workers(4, 0.0, 1));
  const bool a_closer = s.metric.distance(s.set[0].vector, s.set[1].vector) <=
                        s.metric.distance(s.set[2].vector, s.set[3].vector);
  ASSERT_EQ(votes.size(), 4u);
  for (const auto& v : votes) EXPECT_EQ(v.choice, a_closer ? PairChoice::A : PairChoice::B);
}

TEST(LazyRanking, SubmitsPresentedOrder) {
  const RankingTask t{"t", "q", {"a", "b", "c"}, {1, 2, 0}};
  EXPECT_EQ(lazy_ranking(t, "w").order, t.presented());
}

TEST(Benchmark, SplitsAreIdentityDisjointAndEasyMatchesHardCount) {
  BenchmarkConfig c;
  c.n_items = 150;
  c.dim = 6;
  c.n_identities = 50;
  c.train_tasks = 40;
  c.test_tasks = 10;
  c.seed = 2;
  const auto b = make_benchmark(c);
  std::set<std::string> train_ids;
  for (const auto& r : b.train_set.records()) train_ids.insert(r.identity);
  for (const auto& r : b.test_set.records()) EXPECT_FALSE(train_ids.contains(r.identity));
  EXPECT_EQ(b.test_easy.size(), b.test_hard.size());
  for (const auto& t : b.test_easy) EXPECT_TRUE(b.test_set.contains(t.negative));
  EXPECT_EQ(b.test_aggregated.size(), b.test_tasks.size());
}

TEST(MetricFiles, RoundTrip) {
  testing::TempDir dir;
  const auto m = GroundTruthMetric::random(5, 3, 1);
  save_metric(m, dir / "m.json");
  const auto back = load_metric(dir / "m.json");
  EXPECT_EQ(back.transform, m.transform);
  EXPECT_EQ(back.d_out, 3u);
}

}  // namespace
}  // namespace lookalike
