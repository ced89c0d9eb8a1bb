#include "lookalike/annotation.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"

namespace lookalike {

namespace {

using TaskIndex = std::map<std::string, const RankingTask*, std::less<>>;

TaskIndex index_tasks(std::span<const RankingTask> tasks) {
  TaskIndex index;
  for (const auto& t : tasks) {
    if (!index.emplace(t.task_id, &t).second) {
      throw ValidationError("duplicate task_id '" + t.task_id + "'");
    }
  }
  return index;
}

std::vector<const WorkerRanking*> rankings_for(const RankingTask& task, std::span<const WorkerRanking> rankings) {
  std::vector<const WorkerRanking*> out;
  for (const auto& r : rankings) {
    if (r.task_id != task.task_id) continue;
    validate_ranking(task, r);
    out.push_back(&r);
  }
  if (out.empty()) {
    throw ValidationError("task '" + task.task_id + "' has no surviving rankings");
  }
  return out;
}

// positions[w][c] = screen position worker w gave candidate c.
std::vector<std::vector<std::size_t>> candidate_positions(const RankingTask& task,
                                                          const std::vector<const WorkerRanking*>& rankings) {
  std::map<std::string_view, std::size_t> candidate_index;
  for (std::size_t c = 0; c < task.candidates.size(); ++c) candidate_index.emplace(task.candidates[c], c);
  std::vector<std::vector<std::size_t>> positions;
  positions.reserve(rankings.size());
  for (const auto* r : rankings) {
    std::vector<std::size_t> pos(task.candidates.size());
    for (std::size_t p = 0; p < r->order.size(); ++p) pos[candidate_index.at(r->order[p])] = p;
    positions.push_back(std::move(pos));
  }
  return positions;
}

const char* kind_name(TripletKind k) { return k == TripletKind::Hard ? "hard" : "easy"; }

}  // namespace

double AggregatedTask::position_of(std::string_view item_id) const {
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i] == item_id) return avg_position[i];
  throw NotFoundError("item '" + std::string(item_id) + "' is not a candidate of task '" + task_id + "'");
}

void validate_ranking(const RankingTask& task, const WorkerRanking& ranking) {
  std::vector<std::string_view> got(ranking.order.begin(), ranking.order.end());
  std::vector<std::string_view> want(task.candidates.begin(), task.candidates.end());
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  if (got != want) {
    throw ValidationError("ranking by '" + ranking.worker_id + "' for task '" + task.task_id +
                          "' is not a permutation of the task's candidates");
  }
}

std::size_t rearranged_count(const RankingTask& task, const WorkerRanking& ranking) {
  validate_ranking(task, ranking);
  std::size_t moved = 0;
  for (std::size_t p = 0; p < ranking.order.size(); ++p)
    if (ranking.order[p] != task.candidates[task.presentation_order[p]]) ++moved;
  return moved;
}

std::vector<WorkerRanking> filter_lazy_workers(std::span<const WorkerRanking> rankings,
                                               std::span<const RankingTask> tasks, double min_avg_rearranged) {
  const TaskIndex index = index_tasks(tasks);
  struct Tally {
    std::size_t moved = 0;
    std::size_t tasks = 0;
  };
  std::map<std::string, Tally, std::less<>> per_worker;
  for (const auto& r : rankings) {
    const auto it = index.find(r.task_id);
    if (it == index.end()) {
      throw ValidationError("ranking by '" + r.worker_id + "' references unknown task '" + r.task_id + "'");
    }
    auto& tally = per_worker[r.worker_id];
    tally.moved += rearranged_count(*it->second, r);
    ++tally.tasks;
  }
  std::vector<WorkerRanking> kept;
  for (const auto& r : rankings) {
    const auto& tally = per_worker.find(r.worker_id)->second;
    const double mean = static_cast<double>(tally.moved) / static_cast<double>(tally.tasks);
    if (mean >= min_avg_rearranged) kept.push_back(r);
  }
  return kept;
}

AggregatedTask average_positions(const RankingTask& task, std::span<const WorkerRanking> rankings) {
  const auto mine = rankings_for(task, rankings);
  const auto positions = candidate_positions(task, mine);
  AggregatedTask agg;
  agg.task_id = task.task_id;
  agg.query_id = task.query_id;
  agg.candidates = task.candidates;
  agg.n_workers = mine.size();
  agg.avg_position.assign(task.candidates.size(), 0.0);
  for (std::size_t c = 0; c < task.candidates.size(); ++c) {
    std::size_t sum = 0;
    for (const auto& pos : positions) sum += pos[c];
    agg.avg_position[c] = static_cast<double>(sum) / static_cast<double>(mine.size());
  }
  return agg;
}

std::vector<Triplet> extract_hard_triplets(const RankingTask& task, std::span<const WorkerRanking> rankings) {
  const auto mine = rankings_for(task, rankings);
  const auto positions = candidate_positions(task, mine);
  const double n = static_cast<double>(mine.size());
  std::vector<Triplet> out;
  for (std::size_t i = 0; i < task.candidates.size(); ++i) {
    for (std::size_t j = i + 1; j < task.candidates.size(); ++j) {
      std::size_t i_above = 0;
      for (const auto& pos : positions)
        if (pos[i] < pos[j]) ++i_above;
      const std::size_t j_above = mine.size() - i_above;
      if (i_above == j_above) continue;
      const bool i_wins = i_above > j_above;
      out.push_back({task.query_id, task.candidates[i_wins ? i : j], task.candidates[i_wins ? j : i],
                     static_cast<double>(std::max(i_above, j_above)) / n, TripletKind::Hard});
    }
  }
  return out;
}

std::vector<Triplet> extract_all_hard_triplets(std::span<const RankingTask> tasks,
                                               std::span<const WorkerRanking> rankings) {
  const TaskIndex index = index_tasks(tasks);
  std::map<std::string_view, std::vector<WorkerRanking>> grouped;
  for (const auto& r : rankings) {
    if (!index.contains(r.task_id)) {
      throw ValidationError("ranking by '" + r.worker_id + "' references unknown task '" + r.task_id + "'");
    }
    grouped[r.task_id].push_back(r);
  }
  std::vector<Triplet> out;
  for (const auto& task : tasks) {
    const auto it = grouped.find(task.task_id);
    if (it == grouped.end()) continue;
    auto triplets = extract_hard_triplets(task, it->second);
    out.insert(out.end(), std::make_move_iterator(triplets.begin()), std::make_move_iterator(triplets.end()));
  }
  return out;
}

EasyTripletSampler::EasyTripletSampler(const EmbeddingSet& set, std::span<const RankingTask> tasks)
    : set_(&set), tasks_(tasks.begin(), tasks.end()) {
  pools_.reserve(tasks_.size());
  for (const auto& task : tasks_) {
    const std::size_t anchor = set.require_index(task.query_id);
    for (const auto& c : task.candidates) set.require_index(c);
    const std::vector<double> all = distances_from(set, anchor);
    if (all.empty()) {
      throw EmptyPoolError("task '" + task.task_id + "': anchor has no other items");
    }
    std::vector<double> sorted = all;
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>((sorted.size() - 1) / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    const double median = *mid;

    const std::set<std::string_view> excluded(task.candidates.begin(), task.candidates.end());
    const auto& identity = set[anchor].identity;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0, k = 0; i < set.size(); ++i) {
      if (i == anchor) continue;
      const double d = all[k++];
      if (d > median && set[i].identity != identity && !excluded.contains(set[i].item_id)) pool.push_back(i);
    }
    if (pool.empty()) {
      throw EmptyPoolError("task '" + task.task_id + "': no eligible item beyond the median anchor distance");
    }
    pools_.push_back(std::move(pool));
  }
}

Triplet EasyTripletSampler::sample(std::size_t task_index, Rng& rng) const {
  const auto& task = tasks_.at(task_index);
  const auto& pool = pools_[task_index];
  const std::size_t pos = uniform_index(rng, task.candidates.size());
  const std::size_t neg = uniform_index(rng, pool.size());
  return {task.query_id, task.candidates[pos], (*set_)[pool[neg]].item_id, 1.0, TripletKind::Easy};
}

std::vector<std::string> EasyTripletSampler::pool(std::size_t task_index) const {
  std::vector<std::string> out;
  for (std::size_t i : pools_.at(task_index)) out.push_back((*set_)[i].item_id);
  return out;
}

Triplet sample_easy_triplet(const RankingTask& task, const EmbeddingSet& set, Rng& rng) {
  const RankingTask one[] = {task};
  return EasyTripletSampler(set, one).sample(0, rng);
}

std::vector<Triplet> sample_easy_triplets(const EmbeddingSet& set, std::span<const RankingTask> tasks,
                                          std::size_t count, std::uint64_t seed) {
  std::vector<Triplet> out;
  if (count == 0) return out;
  const EasyTripletSampler sampler(set, tasks);
  Rng rng(seed);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.sample(uniform_index(rng, sampler.task_count()), rng));
  return out;
}

nlohmann::json ranking_to_json(const WorkerRanking& ranking) {
  return {{"worker_id", ranking.worker_id}, {"task_id", ranking.task_id}, {"order", ranking.order}};
}

void save_rankings(std::span<const WorkerRanking> rankings, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& r : rankings) out.write(ranking_to_json(r));
}

std::vector<WorkerRanking> load_rankings(const std::filesystem::path& path) {
  std::vector<WorkerRanking> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      out.push_back({j.at("worker_id").get<std::string>(), j.at("task_id").get<std::string>(),
                     j.at("order").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
  });
  return out;
}

void save_triplets(std::span<const Triplet> triplets, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& t : triplets) {
    out.write({{"anchor", t.anchor},
               {"positive", t.positive},
               {"negative", t.negative},
               {"confidence", t.confidence},
               {"kind", kind_name(t.kind)}});
  }
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::vector<Triplet> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    Triplet t;
    try {
      t.anchor = j.at("anchor").get<std::string>();
      t.positive = j.at("positive").get<std::string>();
      t.negative = j.at("negative").get<std::string>();
      t.confidence = j.at("confidence").get<double>();
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "hard") {
        t.kind = TripletKind::Hard;
      } else if (kind == "easy") {
        t.kind = TripletKind::Easy;
      } else {
        throw ParseError(path.string(), line, "kind must be \"hard\" or \"easy\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
    if (t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative) {
      throw ParseError(path.string(), line, "triplet items must be distinct");
    }
    if (!(t.confidence > 0.5 && t.confidence <= 1.0)) {
      throw ParseError(path.string(), line, "confidence must lie in (0.5, 1]");
    }
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace lookalike
