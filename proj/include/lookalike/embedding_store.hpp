#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lookalike {

/// One precomputed base embedding: an item, the identity it depicts, and its vector.
struct EmbeddingRecord {
  std::string item_id;
  std::string identity;
  std::vector<double> vector;
};

/// Immutable collection of embeddings sharing one dimension.
///
/// Construction validates that every vector has the declared dimension and
/// only finite entries, and that item ids are unique. When `normalize` is set
/// each vector is scaled to unit L2 norm; a zero vector is then rejected.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::size_t dim, std::vector<EmbeddingRecord> records, bool normalize);

  /// Infers the dimension from the first record. An empty record list requires `dim`.
  static EmbeddingSet from_records(std::vector<EmbeddingRecord> records, bool normalize);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  bool normalized() const noexcept { return normalized_; }

  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }

  std::optional<std::size_t> index_of(std::string_view item_id) const;
  bool contains(std::string_view item_id) const { return index_of(item_id).has_value(); }

  /// Throws NotFoundError for unknown ids.
  std::size_t require_index(std::string_view item_id) const;
  const EmbeddingRecord& find(std::string_view item_id) const { return records_[require_index(item_id)]; }

 private:
  std::size_t dim_ = 0;
  bool normalized_ = false;
  std::vector<EmbeddingRecord> records_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct Neighbor {
  std::string item_id;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Reads the JSONL embedding format: one `{"item_id", "identity", "vector"}` object per line.
/// Blank lines are skipped. Throws ParseError (with line number) or ValidationError.
EmbeddingSet load_embeddings(const std::filesystem::path& path, bool normalize = true);

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

/// ‖a − b‖₂. Throws DimensionError on length mismatch.
double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Returns the L2 norm; scales `v` to unit norm in place. Zero vectors are left unchanged.
double normalize_in_place(std::span<double> v) noexcept;

/// Exhaustive nearest-neighbour scan around `query_id`, ascending by distance,
/// ties broken by item id. The query itself is never returned; with
/// `exclude_same_identity` no result shares the query's identity label.
std::vector<Neighbor> top_k_similar(const EmbeddingSet& set, std::string_view query_id, std::size_t k,
                                    bool exclude_same_identity);

/// Distances from record `anchor` to every other record (anchor position skipped), in record order.
std::vector<double> distances_from(const EmbeddingSet& set, std::size_t anchor);

}  // namespace lookalike
