#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/pair_binning.hpp"
#include "lookalike/task_builder.hpp"
#include "lookalike/trainer.hpp"

namespace lookalike {

/// Hidden "perceptual" metric: Euclidean distance after a fixed linear map.
struct GroundTruthMetric {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<double> transform;  // row-major, d_out x d_in

  double distance(std::span<const double> a, std::span<const double> b) const;

  static GroundTruthMetric identity(std::size_t d);

  /// Entries i.i.d. N(0, 1/d_in); redrawn until the map has full row rank.
  static GroundTruthMetric random(std::size_t d_in, std::size_t d_out, std::uint64_t seed);
};

/// Simulated annotator: a Thurstonian observer perturbing each perceived
/// distance with independent Gaussian noise.
struct WorkerModel {
  std::string worker_id;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Numerical rank via Gaussian elimination with partial pivoting.
std::size_t matrix_rank(std::span<const double> row_major, std::size_t rows, std::size_t cols);

/// `n` unit-normalized Gaussian vectors; item `item-00042` gets identity `id-(42 mod n_identities)`.
EmbeddingSet gen_embeddings(std::size_t n, std::size_t d, std::size_t n_identities, std::uint64_t seed);

/// Workers `worker-000` … with seeds derived from `seed`.
std::vector<WorkerModel> make_workers(std::size_t count, double noise_sigma, std::uint64_t seed);

/// Orders the task's candidates by true distance to the query plus per-candidate
/// noise. Deterministic under (worker seed, task id).
WorkerRanking simulate_worker_ranking(const RankingTask& task, const EmbeddingSet& set,
                                      const GroundTruthMetric& metric, const WorkerModel& worker);

/// Every worker ranks every task; output is task-major.
std::vector<WorkerRanking> simulate_rankings(std::span<const RankingTask> tasks, const EmbeddingSet& set,
                                             const GroundTruthMetric& metric, std::span<const WorkerModel> workers);

/// A worker who submits exactly what was presented.
WorkerRanking lazy_ranking(const RankingTask& task, const std::string& worker_id);

/// Each worker picks the pair whose noisy perceived distance is smaller.
std::vector<PairVote> simulate_pair_votes(std::span<const PairOfPairsTask> tasks, const EmbeddingSet& set,
                                          const GroundTruthMetric& metric, std::span<const WorkerModel> workers);

/// Head whose output distance equals the metric's distance (W = transform, no normalization).
ProjectionHead oracle_head(const GroundTruthMetric& metric);

/// Desk-scale end-to-end setup: identity-disjoint train/test splits, simulated
/// rankings, mined hard triplets, and held-out easy triplets.
struct BenchmarkConfig {
  std::size_t n_items = 600;
  std::size_t dim = 32;
  std::size_t metric_dim = 2;  // output dimension of the hidden metric
  std::size_t n_identities = 200;
  std::size_t n_workers = 10;
  double noise_sigma = 0.3;
  std::size_t train_tasks = 400;
  std::size_t test_tasks = 100;
  double holdout_fraction = 0.2;
  std::size_t n_candidates = kDefaultCandidates;
  std::uint64_t seed = 0;
};

struct Benchmark {
  EmbeddingSet base;
  GroundTruthMetric metric;
  EmbeddingSet train_set;
  EmbeddingSet test_set;
  std::vector<RankingTask> train_tasks;
  std::vector<RankingTask> test_tasks;
  std::vector<Triplet> train_hard;
  std::vector<Triplet> test_hard;
  std::vector<Triplet> test_easy;  // same count as test_hard, sampled from held-out identities
  std::vector<AggregatedTask> test_aggregated;
};

Benchmark make_benchmark(const BenchmarkConfig& config);

void save_metric(const GroundTruthMetric& metric, const std::filesystem::path& path);
GroundTruthMetric load_metric(const std::filesystem::path& path);

}  // namespace lookalike
