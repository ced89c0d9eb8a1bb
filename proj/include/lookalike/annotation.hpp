#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/rng.hpp"
#include "lookalike/task_builder.hpp"

namespace lookalike {

/// A worker's submitted order for one task; `order[0]` is the most similar candidate.
struct WorkerRanking {
  std::string worker_id;
  std::string task_id;
  std::vector<std::string> order;

  friend bool operator==(const WorkerRanking&, const WorkerRanking&) = default;
};

/// Mean position (0 = most similar) of each candidate over the surviving workers.
/// `avg_position[i]` belongs to `candidates[i]`.
struct AggregatedTask {
  std::string task_id;
  std::string query_id;
  std::vector<std::string> candidates;
  std::vector<double> avg_position;
  std::size_t n_workers = 0;

  double position_of(std::string_view item_id) const;
};

enum class TripletKind { Hard, Easy };

struct Triplet {
  std::string anchor;
  std::string positive;
  std::string negative;
  double confidence = 1.0;
  TripletKind kind = TripletKind::Hard;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

inline constexpr double kDefaultMinRearranged = 1.5;

/// Number of screen positions whose item differs from what was presented there.
std::size_t rearranged_count(const RankingTask& task, const WorkerRanking& ranking);

/// Throws ValidationError unless `ranking.order` is a permutation of the task's candidates.
void validate_ranking(const RankingTask& task, const WorkerRanking& ranking);

/// Drops every ranking of any worker whose mean rearranged count across their
/// tasks is below `min_avg_rearranged`. Surviving rankings keep input order.
std::vector<WorkerRanking> filter_lazy_workers(std::span<const WorkerRanking> rankings,
                                               std::span<const RankingTask> tasks,
                                               double min_avg_rearranged = kDefaultMinRearranged);

/// Uses only the rankings whose task_id matches `task`. Throws ValidationError if none do.
AggregatedTask average_positions(const RankingTask& task, std::span<const WorkerRanking> rankings);

/// One triplet per unordered candidate pair, anchored at the query. The positive is the
/// candidate most workers placed higher; confidence is that majority fraction. Exact ties are dropped.
std::vector<Triplet> extract_hard_triplets(const RankingTask& task, std::span<const WorkerRanking> rankings);

/// Groups `rankings` by task and applies extract_hard_triplets to every task
/// that has at least one ranking. Output follows task order.
std::vector<Triplet> extract_all_hard_triplets(std::span<const RankingTask> tasks,
                                               std::span<const WorkerRanking> rankings);

/// Precomputed easy-negative pools, one per task.
///
/// The pool for a task holds items whose base distance to the anchor exceeds
/// the (lower) median of the anchor's distances to every other item, excluding
/// the anchor's identity and the task's candidates.
class EasyTripletSampler {
 public:
  EasyTripletSampler(const EmbeddingSet& set, std::span<const RankingTask> tasks);

  std::size_t task_count() const noexcept { return tasks_.size(); }

  /// Positive uniform over the task's candidates, negative uniform over its pool.
  Triplet sample(std::size_t task_index, Rng& rng) const;

  /// Eligible negatives for a task, in set order.
  std::vector<std::string> pool(std::size_t task_index) const;

 private:
  const EmbeddingSet* set_;
  std::vector<RankingTask> tasks_;
  std::vector<std::vector<std::size_t>> pools_;
};

/// Builds a one-task sampler and draws a single easy triplet. Throws EmptyPoolError
/// when no item lies beyond the median.
Triplet sample_easy_triplet(const RankingTask& task, const EmbeddingSet& set, Rng& rng);

/// `count` easy triplets, each from a uniformly chosen task. Used to build
/// easy test populations.
std::vector<Triplet> sample_easy_triplets(const EmbeddingSet& set, std::span<const RankingTask> tasks,
                                          std::size_t count, std::uint64_t seed);

void save_rankings(std::span<const WorkerRanking> rankings, const std::filesystem::path& path);
std::vector<WorkerRanking> load_rankings(const std::filesystem::path& path);

nlohmann::json ranking_to_json(const WorkerRanking& ranking);

void save_triplets(std::span<const Triplet> triplets, const std::filesystem::path& path);
std::vector<Triplet> load_triplets(const std::filesystem::path& path);

}  // namespace lookalike
