#include "lookalike/task_builder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"
#include "lookalike/rng.hpp"

namespace lookalike {

std::vector<std::string> RankingTask::presented() const {
  std::vector<std::string> out;
  out.reserve(presentation_order.size());
  for (std::size_t idx : presentation_order) out.push_back(candidates.at(idx));
  return out;
}

std::vector<RankingTask> build_ranking_tasks(const EmbeddingSet& set, std::span<const std::string> query_ids,
                                             std::size_t n_candidates, std::uint64_t seed) {
  if (n_candidates < 2) {
    throw ValidationError("a ranking task needs at least two candidates");
  }
  std::vector<RankingTask> tasks;
  tasks.reserve(query_ids.size());
  std::set<std::string_view> seen;
  for (const auto& query : query_ids) {
    if (!seen.insert(query).second) {
      throw ValidationError("query '" + query + "' listed twice");
    }
    auto neighbors = top_k_similar(set, query, n_candidates, /*exclude_same_identity=*/true);
    if (neighbors.size() < n_candidates) {
      throw ShortfallError("query '" + query + "' has only " + std::to_string(neighbors.size()) +
                           " eligible candidates, need " + std::to_string(n_candidates));
    }
    RankingTask task;
    task.task_id = "task-" + query;
    task.query_id = query;
    for (auto& nb : neighbors) task.candidates.push_back(std::move(nb.item_id));
    task.presentation_order.resize(n_candidates);
    std::iota(task.presentation_order.begin(), task.presentation_order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, query));
    std::shuffle(task.presentation_order.begin(), task.presentation_order.end(), rng);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<std::string> sample_queries(const EmbeddingSet& set, std::size_t n, std::uint64_t seed) {
  if (n > set.size()) {
    throw ShortfallError("cannot sample " + std::to_string(n) + " queries from " + std::to_string(set.size()) +
                         " items");
  }
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "queries"));
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(set[i].item_id);
  return out;
}

void validate_task(const RankingTask& task, const EmbeddingSet& set) {
  const auto fail = [&](const std::string& why) { throw ValidationError("task '" + task.task_id + "': " + why); };
  const auto& query = set.find(task.query_id);
  std::set<std::string_view> seen;
  for (const auto& c : task.candidates) {
    if (c == task.query_id) fail("query appears among its own candidates");
    if (!seen.insert(c).second) fail("duplicate candidate '" + c + "'");
    if (set.find(c).identity == query.identity) fail("candidate '" + c + "' shares the query's identity");
  }
  std::vector<std::size_t> perm = task.presentation_order;
  std::sort(perm.begin(), perm.end());
  if (perm.size() != task.candidates.size()) fail("presentation order has the wrong length");
  for (std::size_t i = 0; i < perm.size(); ++i)
    if (perm[i] != i) fail("presentation order is not a permutation");
}

std::pair<EmbeddingSet, EmbeddingSet> split_by_identity(const EmbeddingSet& set, double holdout_fraction,
                                                        std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("holdout fraction must lie in [0, 1)");
  }
  std::vector<std::string> identities;
  {
    std::set<std::string> unique;
    for (const auto& r : set.records()) unique.insert(r.identity);
    identities.assign(unique.begin(), unique.end());
  }
  Rng rng(derive_seed(seed, "identity-split"));
  std::shuffle(identities.begin(), identities.end(), rng);
  auto n_held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(identities.size())));
  if (holdout_fraction > 0.0) n_held = std::max<std::size_t>(n_held, 1);
  const std::set<std::string, std::less<>> held(identities.begin(),
                                                identities.begin() + static_cast<std::ptrdiff_t>(n_held));
  std::vector<EmbeddingRecord> kept_records;
  std::vector<EmbeddingRecord> held_records;
  for (const auto& r : set.records()) (held.contains(r.identity) ? held_records : kept_records).push_back(r);
  return {EmbeddingSet(set.dim(), std::move(kept_records), set.normalized()),
          EmbeddingSet(set.dim(), std::move(held_records), set.normalized())};
}

void save_ranking_tasks(std::span<const RankingTask> tasks, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& t : tasks) {
    out.write({{"task_id", t.task_id},
               {"query_id", t.query_id},
               {"candidates", t.candidates},
               {"presentation_order", t.presentation_order}});
  }
}

std::vector<RankingTask> load_ranking_tasks(const std::filesystem::path& path) {
  std::vector<RankingTask> tasks;
  std::set<std::string, std::less<>> ids;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    RankingTask t;
    try {
      t.task_id = j.at("task_id").get<std::string>();
      t.query_id = j.at("query_id").get<std::string>();
      t.candidates = j.at("candidates").get<std::vector<std::string>>();
      t.presentation_order = j.at("presentation_order").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
    std::vector<std::size_t> perm = t.presentation_order;
    std::sort(perm.begin(), perm.end());
    bool ok = perm.size() == t.candidates.size();
    for (std::size_t i = 0; ok && i < perm.size(); ++i) ok = perm[i] == i;
    if (!ok) throw ParseError(path.string(), line, "presentation_order is not a permutation of the candidates");
    if (!ids.insert(t.task_id).second) throw ParseError(path.string(), line, "duplicate task_id '" + t.task_id + "'");
    tasks.push_back(std::move(t));
  });
  return tasks;
}

}  // namespace lookalike
