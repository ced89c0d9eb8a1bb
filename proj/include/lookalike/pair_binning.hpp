#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lookalike/embedding_store.hpp"

namespace lookalike {

/// Two items of different identities and their base-embedding distance.
struct ItemPair {
  std::string first;
  std::string second;
  double distance = 0.0;

  friend bool operator==(const ItemPair&, const ItemPair&) = default;
};

/// Pairs grouped by distance bin; `bins[i]` holds pairs with distance in [edges[i], edges[i+1]).
struct BinnedPairs {
  std::vector<double> edges;
  std::vector<std::vector<ItemPair>> bins;

  std::size_t bin_count() const noexcept { return bins.size(); }
};

enum class PairChoice { A, B };

/// "Which of these two pairs looks more alike?": one comparison between pairs from different bins.
struct PairOfPairsTask {
  std::string task_id;
  ItemPair pair_a;
  ItemPair pair_b;
  std::size_t bin_a = 0;
  std::size_t bin_b = 0;
};

struct PairVote {
  std::string task_id;
  std::string worker_id;
  PairChoice choice = PairChoice::A;
};

/// counts(i, j): number of tasks in which the pair from bin i was judged more
/// similar than the pair from bin j with at least the agreement threshold.
/// Bins are ordered by increasing distance, so the upper triangle (i < j)
/// holds judgements that agree with the embedding distance.
class BinMatrix {
 public:
  BinMatrix() = default;
  BinMatrix(std::vector<double> edges, std::size_t tasks_per_cell);

  std::size_t bin_count() const noexcept { return n_; }
  std::size_t tasks_per_cell() const noexcept { return tasks_per_cell_; }
  const std::vector<double>& edges() const noexcept { return edges_; }

  std::int64_t operator()(std::size_t i, std::size_t j) const { return counts_[i * n_ + j]; }
  std::int64_t& at(std::size_t i, std::size_t j) { return counts_[i * n_ + j]; }

  BinMatrix transposed() const;

 private:
  std::vector<double> edges_;
  std::size_t n_ = 0;
  std::size_t tasks_per_cell_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Assigns every cross-identity pair to the half-open bin [edges[i], edges[i+1])
/// containing its distance. Pairs outside all bins are dropped. Within a bin,
/// pairs keep record order (first index, then second index).
BinnedPairs bin_pairs(const EmbeddingSet& set, std::span<const double> edges);

/// Equal-count quantile edges over all cross-identity pair distances. The last
/// edge is nudged just above the maximum distance so every pair lands in a bin.
std::vector<double> quantile_edges(const EmbeddingSet& set, std::size_t n_bins = 10);

/// Draws exactly `per_cell` distinct (pair from bin i, pair from bin j) combinations for every
/// unordered bin pair i < j, uniformly without replacement. Which pair is shown as "A" is a coin flip.
/// Throws ShortfallError naming the first cell that cannot supply `per_cell` combinations.
std::vector<PairOfPairsTask> build_pair_comparison_tasks(const BinnedPairs& binned, std::size_t per_cell,
                                                         std::uint64_t seed);

/// Counts a task towards cell (winner bin, loser bin) iff the winning pair's
/// vote share reaches `agreement_threshold`. Requires 0.5 < threshold ≤ 1.
BinMatrix aggregate_pair_votes(std::span<const PairOfPairsTask> tasks, std::span<const PairVote> votes,
                               double agreement_threshold, std::vector<double> edges);

/// Share of counted comparisons, restricted to `bin_subset`, in which the
/// lower-distance pair won: upper / (upper + lower).
double triangle_accuracy(const BinMatrix& matrix, std::span<const std::size_t> bin_subset);

/// Header row of bin upper bounds, then one row per bin labelled by its upper bound.
void write_bin_matrix_csv(const BinMatrix& matrix, const std::filesystem::path& path);

void save_pair_tasks(std::span<const PairOfPairsTask> tasks, const std::filesystem::path& path);
std::vector<PairOfPairsTask> load_pair_tasks(const std::filesystem::path& path);
void save_pair_votes(std::span<const PairVote> votes, const std::filesystem::path& path);
std::vector<PairVote> load_pair_votes(const std::filesystem::path& path);

}  // namespace lookalike
