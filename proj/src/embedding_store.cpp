#include "lookalike/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"

namespace lookalike {

EmbeddingSet::EmbeddingSet(std::size_t dim, std::vector<EmbeddingRecord> records, bool normalize)
    : dim_(dim), normalized_(normalize), records_(std::move(records)) {
  if (dim_ == 0) {
    throw ValidationError("embedding dimension must be positive");
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto& rec = records_[i];
    if (rec.vector.size() != dim_) {
      throw ValidationError("record '" + rec.item_id + "' has dimension " + std::to_string(rec.vector.size()) +
                            ", expected " + std::to_string(dim_));
    }
    if (!std::all_of(rec.vector.begin(), rec.vector.end(), [](double x) { return std::isfinite(x); })) {
      throw ValidationError("record '" + rec.item_id + "' contains a non-finite value");
    }
    if (normalize && normalize_in_place(rec.vector) == 0.0) {
      throw ValidationError("record '" + rec.item_id + "' is a zero vector and cannot be normalized");
    }
    if (!index_.emplace(rec.item_id, i).second) {
      throw ValidationError("duplicate item_id '" + rec.item_id + "'");
    }
  }
}

EmbeddingSet EmbeddingSet::from_records(std::vector<EmbeddingRecord> records, bool normalize) {
  if (records.empty()) {
    throw ValidationError("cannot infer dimension of an empty embedding set");
  }
  const std::size_t dim = records.front().vector.size();
  return EmbeddingSet(dim, std::move(records), normalize);
}

std::optional<std::size_t> EmbeddingSet::index_of(std::string_view item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::require_index(std::string_view item_id) const {
  auto idx = index_of(item_id);
  if (!idx) {
    throw NotFoundError("unknown item_id '" + std::string(item_id) + "'");
  }
  return *idx;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, bool normalize) {
  std::vector<EmbeddingRecord> records;
  std::size_t dim = 0;
  std::map<std::string, std::size_t, std::less<>> first_seen;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    EmbeddingRecord rec;
    try {
      rec.item_id = j.at("item_id").get<std::string>();
      rec.identity = j.at("identity").get<std::string>();
      rec.vector = j.at("vector").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
    if (rec.vector.empty()) {
      throw ParseError(path.string(), line, "empty vector");
    }
    if (dim == 0) dim = rec.vector.size();
    if (rec.vector.size() != dim) {
      throw ParseError(path.string(), line,
                       "vector has dimension " + std::to_string(rec.vector.size()) + ", expected " +
                           std::to_string(dim));
    }
    if (auto [it, inserted] = first_seen.emplace(rec.item_id, line); !inserted) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": duplicate item_id '" + rec.item_id +
                            "' (first seen on line " + std::to_string(it->second) + ")");
    }
    records.push_back(std::move(rec));
  });
  if (records.empty()) {
    throw ValidationError(path.string() + ": no embedding records");
  }
  return EmbeddingSet(dim, std::move(records), normalize);
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& rec : set.records()) {
    out.write({{"item_id", rec.item_id}, {"identity", rec.identity}, {"vector", rec.vector}});
  }
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("distance between vectors of length " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

double normalize_in_place(std::span<double> v) noexcept {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return norm;
}

std::vector<Neighbor> top_k_similar(const EmbeddingSet& set, std::string_view query_id, std::size_t k,
                                    bool exclude_same_identity) {
  const std::size_t q = set.require_index(query_id);
  if (k == 0) {
    throw ValidationError("k must be at least 1");
  }
  const auto& query = set[q];
  std::vector<Neighbor> pool;
  pool.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i == q) continue;
    const auto& rec = set[i];
    if (exclude_same_identity && rec.identity == query.identity) continue;
    pool.push_back({rec.item_id, euclidean_distance(query.vector, rec.vector)});
  }
  const auto by_distance = [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.item_id < b.item_id;
  };
  const std::size_t n = std::min(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n), pool.end(), by_distance);
  pool.resize(n);
  return pool;
}

std::vector<double> distances_from(const EmbeddingSet& set, std::size_t anchor) {
  std::vector<double> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i == anchor) continue;
    out.push_back(euclidean_distance(set[anchor].vector, set[i].vector));
  }
  return out;
}

}  // namespace lookalike
