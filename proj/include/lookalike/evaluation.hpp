#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/trainer.hpp"

namespace lookalike {

struct AccuracyCount {
  std::size_t correct = 0;
  std::size_t total = 0;

  /// NaN when `total` is zero.
  double rate() const;
};

struct TripletAccuracy {
  double accuracy = 0.0;
  AccuracyCount hard;
  AccuracyCount easy;
};

struct ConfidenceBin {
  double lower = 0.0;
  double upper = 0.0;
  AccuracyCount count;
};

struct PrecisionAtK {
  std::map<std::size_t, double> rate;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // tasks whose human top choice was tied
};

/// Per-candidate relevance for one task: n − avg_position (6 − position for six candidates).
struct RelevanceProfile {
  std::vector<std::string> candidates;
  std::vector<double> relevance;

  static RelevanceProfile from(const AggregatedTask& task);
};

struct WinRate {
  double a = 0.0;
  double b = 0.0;
  double tie = 0.0;
};

struct ScoredPair {
  double distance = 0.0;
  bool same_identity = false;
};

/// Query plus the items a model retrieved for it.
struct RetrievalList {
  std::string query;
  std::vector<std::string> retrieved;
};

struct EvalReport {
  double hard_accuracy = 0.0;
  double easy_accuracy = 0.0;
  double total = 0.0;
  std::size_t hard_count = 0;
  std::size_t easy_count = 0;
  std::vector<ConfidenceBin> per_confidence_bin;
  PrecisionAtK precision_at_k;
  double mean_ndcg = 0.0;
  std::size_t ndcg_tasks = 0;
};

inline const std::vector<double> kDefaultConfidenceEdges{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

/// Returns true iff d(f(a), f(p)) < d(f(a), f(n)) in `space`; exact ties count as wrong.
bool triplet_correct(const EmbeddingSet& space, const Triplet& t);

/// Fraction of triplets the head orders correctly, with a hard/easy breakdown.
TripletAccuracy triplet_accuracy(const ProjectionHead& head, const EmbeddingSet& base,
                                 std::span<const Triplet> triplets);

/// Half-open bins [low, high) over confidence, the last bin closed at its upper edge.
std::vector<ConfidenceBin> accuracy_by_confidence(const ProjectionHead& head, const EmbeddingSet& base,
                                                  std::span<const Triplet> hard_triplets,
                                                  std::span<const double> bin_edges = kDefaultConfidenceEdges);

/// Task candidates ordered by distance to the query in `space`, ties by item id.
std::vector<std::string> model_order(const EmbeddingSet& space, const std::string& query,
                                     std::span<const std::string> candidates);

/// Rate at which the human top choice (strict minimum average position) is
/// among the model's k nearest candidates, for each k in `k_values`.
PrecisionAtK precision_top_k(const ProjectionHead& head, const EmbeddingSet& base,
                             std::span<const AggregatedTask> tasks, std::span<const std::size_t> k_values);

/// Σ (2^rel − 1) / log2(i + 1) over model positions i = 1..n, divided by the same sum for
/// the relevance-sorted order.
double ndcg(std::span<const std::string> model_order, const RelevanceProfile& relevance);

/// Mean NDCG of the head's candidate order over the tasks.
double mean_ndcg(const ProjectionHead& head, const EmbeddingSet& base, std::span<const AggregatedTask> tasks);

/// How often model A's top pick sits above model B's in the workers' average positions.
/// `picks_a` / `picks_b` map task id → picked item.
WinRate top_image_winrate(std::span<const AggregatedTask> merged_tasks,
                          const std::map<std::string, std::string, std::less<>>& picks_a,
                          const std::map<std::string, std::string, std::less<>>& picks_b);

/// P(same-identity distance < different-identity distance), ties counting one half.
double roc_auc(std::span<const ScoredPair> scores);

/// Distances of every pair in `space`, labelled by whether the identities agree.
std::vector<ScoredPair> identity_pair_scores(const EmbeddingSet& space);

/// Mean over (query, retrieved) pairs of the fraction of differing attribute bits.
double attribute_hamming_analysis(const std::map<std::string, std::vector<std::uint8_t>, std::less<>>& attributes,
                                  std::span<const RetrievalList> retrieval_lists);

/// Hard accuracy, easy accuracy and their mean; per-confidence bins; precision@1..5; mean NDCG.
EvalReport evaluate(const ProjectionHead& head, const EmbeddingSet& base, std::span<const Triplet> hard_triplets,
                    std::span<const Triplet> easy_triplets, std::span<const AggregatedTask> tasks);

nlohmann::json report_to_json(const EvalReport& report);

/// Writes triplet_accuracy.csv, confidence_bins.csv and precision_at_k.csv into `dir`.
void write_report_tables(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace lookalike
