#include "lookalike/pair_binning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"
#include "lookalike/rng.hpp"

namespace lookalike {

namespace {

void check_edges(std::span<const double> edges) {
  if (edges.size() < 2) {
    throw ValidationError("bin edges need at least two values");
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i])) {
      throw ValidationError("bin edge " + std::to_string(i) + " is not finite");
    }
    if (i > 0 && !(edges[i] > edges[i - 1])) {
      throw ValidationError("bin edges must be strictly increasing (edge " + std::to_string(i) + ")");
    }
  }
}

bool shares_item(const ItemPair& a, const ItemPair& b) {
  return a.first == b.first || a.first == b.second || a.second == b.first || a.second == b.second;
}

std::string pair_task_id(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pp-%06zu", n);
  return buf;
}

const char* choice_name(PairChoice c) { return c == PairChoice::A ? "A" : "B"; }

}  // namespace

BinMatrix::BinMatrix(std::vector<double> edges, std::size_t tasks_per_cell)
    : edges_(std::move(edges)), tasks_per_cell_(tasks_per_cell) {
  check_edges(edges_);
  n_ = edges_.size() - 1;
  counts_.assign(n_ * n_, 0);
}

BinMatrix BinMatrix::transposed() const {
  BinMatrix t = *this;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) t.at(i, j) = (*this)(j, i);
  return t;
}

BinnedPairs bin_pairs(const EmbeddingSet& set, std::span<const double> edges) {
  check_edges(edges);
  BinnedPairs out;
  out.edges.assign(edges.begin(), edges.end());
  out.bins.resize(edges.size() - 1);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = i + 1; j < set.size(); ++j) {
      if (set[i].identity == set[j].identity) continue;
      const double d = euclidean_distance(set[i].vector, set[j].vector);
      // First edge strictly greater than d; bin is the one just below it.
      const auto it = std::upper_bound(edges.begin(), edges.end(), d);
      if (it == edges.begin() || it == edges.end()) continue;
      const auto bin = static_cast<std::size_t>(it - edges.begin()) - 1;
      out.bins[bin].push_back({set[i].item_id, set[j].item_id, d});
    }
  }
  return out;
}

std::vector<double> quantile_edges(const EmbeddingSet& set, std::size_t n_bins) {
  if (n_bins == 0) {
    throw ValidationError("number of bins must be positive");
  }
  std::vector<double> dist;
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j)
      if (set[i].identity != set[j].identity) dist.push_back(euclidean_distance(set[i].vector, set[j].vector));
  if (dist.size() < n_bins) {
    throw ShortfallError("only " + std::to_string(dist.size()) + " cross-identity pairs for " +
                         std::to_string(n_bins) + " bins");
  }
  std::sort(dist.begin(), dist.end());
  std::vector<double> edges{dist.front()};
  for (std::size_t b = 1; b < n_bins; ++b) {
    const double e = dist[b * dist.size() / n_bins];
    if (e > edges.back()) edges.push_back(e);
  }
  edges.push_back(std::nextafter(dist.back(), std::numeric_limits<double>::infinity()));
  if (edges.size() != n_bins + 1) {
    throw ValidationError("pair distances have too many ties for " + std::to_string(n_bins) + " distinct bins");
  }
  return edges;
}

std::vector<PairOfPairsTask> build_pair_comparison_tasks(const BinnedPairs& binned, std::size_t per_cell,
                                                         std::uint64_t seed) {
  if (per_cell == 0) {
    throw ValidationError("per_cell must be at least 1");
  }
  constexpr std::uint64_t kEnumerationLimit = 2'000'000;
  const std::size_t n = binned.bin_count();
  std::vector<PairOfPairsTask> tasks;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& bi = binned.bins[i];
      const auto& bj = binned.bins[j];
      const std::string cell = "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
      const auto shortfall = [&](std::uint64_t available) {
        return ShortfallError("cell " + cell + " has " + std::to_string(available) +
                              " usable pair combinations, need " + std::to_string(per_cell));
      };
      if (bi.empty() || bj.empty()) throw shortfall(0);
      if (bj.size() > std::numeric_limits<std::uint64_t>::max() / bi.size()) {
        throw ValidationError("cell " + cell + " is too large to sample");
      }
      const std::uint64_t total = static_cast<std::uint64_t>(bi.size()) * bj.size();
      Rng rng(derive_seed(seed, "cell:" + std::to_string(i) + ":" + std::to_string(j)));

      std::vector<std::uint64_t> chosen;
      chosen.reserve(per_cell);
      if (total <= kEnumerationLimit) {
        std::vector<std::uint64_t> valid;
        for (std::uint64_t c = 0; c < total; ++c)
          if (!shares_item(bi[c / bj.size()], bj[c % bj.size()])) valid.push_back(c);
        if (valid.size() < per_cell) throw shortfall(valid.size());
        for (std::size_t s = 0; s < per_cell; ++s) {
          const std::size_t pick = s + uniform_index(rng, valid.size() - s);
          std::swap(valid[s], valid[pick]);
          chosen.push_back(valid[s]);
        }
      } else {
        std::unordered_set<std::uint64_t> seen;
        std::uniform_int_distribution<std::uint64_t> draw(0, total - 1);
        const std::size_t max_attempts = 1000 * per_cell + 1000;
        for (std::size_t attempt = 0; chosen.size() < per_cell; ++attempt) {
          if (attempt == max_attempts) throw shortfall(chosen.size());
          const std::uint64_t c = draw(rng);
          if (shares_item(bi[c / bj.size()], bj[c % bj.size()])) continue;
          if (seen.insert(c).second) chosen.push_back(c);
        }
      }

      for (std::uint64_t c : chosen) {
        PairOfPairsTask t;
        t.task_id = pair_task_id(tasks.size());
        const ItemPair& pi = bi[c / bj.size()];
        const ItemPair& pj = bj[c % bj.size()];
        if (rng() & 1U) {
          t.pair_a = pi, t.bin_a = i, t.pair_b = pj, t.bin_b = j;
        } else {
          t.pair_a = pj, t.bin_a = j, t.pair_b = pi, t.bin_b = i;
        }
        tasks.push_back(std::move(t));
      }
    }
  }
  return tasks;
}

BinMatrix aggregate_pair_votes(std::span<const PairOfPairsTask> tasks, std::span<const PairVote> votes,
                               double agreement_threshold, std::vector<double> edges) {
  if (!(agreement_threshold > 0.5 && agreement_threshold <= 1.0)) {
    throw ValidationError("agreement threshold must lie in (0.5, 1]");
  }
  const std::size_t n_bins = edges.size() < 2 ? 0 : edges.size() - 1;

  std::map<std::string, std::size_t, std::less<>> by_id;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> per_cell;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    if (!by_id.emplace(task.task_id, t).second) {
      throw ValidationError("duplicate pair task id '" + task.task_id + "'");
    }
    if (task.bin_a == task.bin_b || task.bin_a >= n_bins || task.bin_b >= n_bins) {
      throw ValidationError("pair task '" + task.task_id + "' has invalid bins");
    }
    ++per_cell[std::minmax(task.bin_a, task.bin_b)];
  }
  std::size_t tasks_per_cell = 0;
  for (const auto& [cell, count] : per_cell) tasks_per_cell = std::max(tasks_per_cell, count);

  std::vector<std::size_t> for_a(tasks.size(), 0);
  std::vector<std::size_t> for_b(tasks.size(), 0);
  std::set<std::pair<std::string_view, std::size_t>> voted;
  for (const auto& vote : votes) {
    const auto it = by_id.find(vote.task_id);
    if (it == by_id.end()) {
      throw ValidationError("vote by '" + vote.worker_id + "' references unknown task '" + vote.task_id + "'");
    }
    if (!voted.emplace(vote.worker_id, it->second).second) {
      throw ValidationError("worker '" + vote.worker_id + "' voted twice on task '" + vote.task_id + "'");
    }
    ++(vote.choice == PairChoice::A ? for_a : for_b)[it->second];
  }

  BinMatrix matrix(std::move(edges), tasks_per_cell);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const double total = static_cast<double>(for_a[t] + for_b[t]);
    if (total == 0.0) {
      throw ValidationError("pair task '" + tasks[t].task_id + "' has no votes");
    }
    // Compare counts against threshold * total with a relative guard so that 8 of 10 meets 0.8.
    const double needed = agreement_threshold * total * (1.0 - 1e-12);
    if (static_cast<double>(for_a[t]) >= needed) {
      ++matrix.at(tasks[t].bin_a, tasks[t].bin_b);
    } else if (static_cast<double>(for_b[t]) >= needed) {
      ++matrix.at(tasks[t].bin_b, tasks[t].bin_a);
    }
  }
  return matrix;
}

double triangle_accuracy(const BinMatrix& matrix, std::span<const std::size_t> bin_subset) {
  std::vector<std::size_t> bins(bin_subset.begin(), bin_subset.end());
  std::sort(bins.begin(), bins.end());
  bins.erase(std::unique(bins.begin(), bins.end()), bins.end());
  if (bins.size() < 2) {
    throw ValidationError("triangle accuracy needs at least two distinct bins");
  }
  if (bins.back() >= matrix.bin_count()) {
    throw ValidationError("bin index " + std::to_string(bins.back()) + " out of range");
  }
  double upper = 0.0;
  double lower = 0.0;
  for (std::size_t a = 0; a < bins.size(); ++a) {
    for (std::size_t b = a + 1; b < bins.size(); ++b) {
      upper += static_cast<double>(matrix(bins[a], bins[b]));
      lower += static_cast<double>(matrix(bins[b], bins[a]));
    }
  }
  if (upper + lower == 0.0) {
    throw UndefinedMetricError("no counted comparisons among the selected bins");
  }
  return upper / (upper + lower);
}

void write_bin_matrix_csv(const BinMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot open '" + path.string() + "' for writing");
  }
  const auto upper_bound = [&](std::size_t i) { return nlohmann::json(matrix.edges()[i + 1]).dump(); };
  out << "bin_upper";
  for (std::size_t j = 0; j < matrix.bin_count(); ++j) out << ',' << upper_bound(j);
  out << '\n';
  for (std::size_t i = 0; i < matrix.bin_count(); ++i) {
    out << upper_bound(i);
    for (std::size_t j = 0; j < matrix.bin_count(); ++j) out << ',' << matrix(i, j);
    out << '\n';
  }
}

void save_pair_tasks(std::span<const PairOfPairsTask> tasks, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& t : tasks) {
    out.write({{"task_id", t.task_id},
               {"pair_a", {t.pair_a.first, t.pair_a.second}},
               {"pair_b", {t.pair_b.first, t.pair_b.second}},
               {"distance_a", t.pair_a.distance},
               {"distance_b", t.pair_b.distance},
               {"bin_a", t.bin_a},
               {"bin_b", t.bin_b}});
  }
}

std::vector<PairOfPairsTask> load_pair_tasks(const std::filesystem::path& path) {
  std::vector<PairOfPairsTask> tasks;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      PairOfPairsTask t;
      t.task_id = j.at("task_id").get<std::string>();
      const auto a = j.at("pair_a").get<std::vector<std::string>>();
      const auto b = j.at("pair_b").get<std::vector<std::string>>();
      if (a.size() != 2 || b.size() != 2) throw ParseError(path.string(), line, "pairs must have two items");
      t.pair_a = {a[0], a[1], j.value("distance_a", 0.0)};
      t.pair_b = {b[0], b[1], j.value("distance_b", 0.0)};
      t.bin_a = j.at("bin_a").get<std::size_t>();
      t.bin_b = j.at("bin_b").get<std::size_t>();
      tasks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
  });
  return tasks;
}

void save_pair_votes(std::span<const PairVote> votes, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& v : votes) {
    out.write({{"task_id", v.task_id}, {"worker_id", v.worker_id}, {"choice", choice_name(v.choice)}});
  }
}

std::vector<PairVote> load_pair_votes(const std::filesystem::path& path) {
  std::vector<PairVote> votes;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      PairVote v;
      v.task_id = j.at("task_id").get<std::string>();
      v.worker_id = j.at("worker_id").get<std::string>();
      const auto choice = j.at("choice").get<std::string>();
      if (choice == "A") {
        v.choice = PairChoice::A;
      } else if (choice == "B") {
        v.choice = PairChoice::B;
      } else {
        throw ParseError(path.string(), line, "choice must be \"A\" or \"B\"");
      }
      votes.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line, e.what());
    }
  });
  return votes;
}

}  // namespace lookalike
