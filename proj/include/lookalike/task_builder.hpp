#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lookalike/embedding_store.hpp"

namespace lookalike {

/// One ranking unit: a query face and its nearest cross-identity neighbours.
///
/// `candidates` is in base-embedding similarity order (nearest first).
/// `presentation_order[p]` is the index into `candidates` shown at screen position p.
struct RankingTask {
  std::string task_id;
  std::string query_id;
  std::vector<std::string> candidates;
  std::vector<std::size_t> presentation_order;

  /// Candidates in the order a worker first sees them.
  std::vector<std::string> presented() const;
};

inline constexpr std::size_t kDefaultCandidates = 6;

/// One task per query, with id "task-<query_id>": the `n_candidates` nearest items of other identities,
/// shuffled for presentation with a per-query seed derived from (seed, query_id).
/// Throws ShortfallError when a query has too few eligible neighbours.
std::vector<RankingTask> build_ranking_tasks(const EmbeddingSet& set, std::span<const std::string> query_ids,
                                             std::size_t n_candidates, std::uint64_t seed);

/// Uniform sample of `n` distinct item ids, in set order.
std::vector<std::string> sample_queries(const EmbeddingSet& set, std::size_t n, std::uint64_t seed);

/// Checks the task invariants (distinct candidates, none sharing the query's
/// identity, valid permutation) against `set`. Throws ValidationError.
void validate_task(const RankingTask& task, const EmbeddingSet& set);

/// Partitions identities into a kept and a held-out group; returns the two
/// sub-sets (kept, held_out). `holdout_fraction` of identities (rounded, at
/// least one when fraction > 0) go to the held-out group.
std::pair<EmbeddingSet, EmbeddingSet> split_by_identity(const EmbeddingSet& set, double holdout_fraction,
                                                        std::uint64_t seed);

void save_ranking_tasks(std::span<const RankingTask> tasks, const std::filesystem::path& path);
std::vector<RankingTask> load_ranking_tasks(const std::filesystem::path& path);

}  // namespace lookalike
