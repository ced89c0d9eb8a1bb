#include "lookalike/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"
#include "lookalike/rng.hpp"

namespace lookalike {

namespace {

std::string numbered(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s-%05zu", prefix, i);
  return buf;
}

std::vector<double> transform_vector(const GroundTruthMetric& m, std::span<const double> x) {
  std::vector<double> out(m.d_out, 0.0);
  for (std::size_t r = 0; r < m.d_out; ++r)
    for (std::size_t c = 0; c < m.d_in; ++c) out[r] += m.transform[r * m.d_in + c] * x[c];
  return out;
}

}  // namespace

double GroundTruthMetric::distance(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != d_in || b.size() != d_in) {
    throw DimensionError("metric expects vectors of dimension " + std::to_string(d_in));
  }
  std::vector<double> diff(d_in);
  for (std::size_t i = 0; i < d_in; ++i) diff[i] = a[i] - b[i];
  const auto mapped = transform_vector(*this, diff);
  double sq = 0.0;
  for (double x : mapped) sq += x * x;
  return std::sqrt(sq);
}

GroundTruthMetric GroundTruthMetric::identity(std::size_t d) {
  GroundTruthMetric m{d, d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) m.transform[i * d + i] = 1.0;
  return m;
}

GroundTruthMetric GroundTruthMetric::random(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  if (d_in == 0 || d_out == 0) {
    throw ValidationError("metric dimensions must be positive");
  }
  Rng rng(derive_seed(seed, "metric"));
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  GroundTruthMetric m{d_in, d_out, std::vector<double>(d_in * d_out)};
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (double& x : m.transform) x = gauss(rng);
    if (matrix_rank(m.transform, d_out, d_in) == std::min(d_in, d_out)) return m;
  }
  throw NumericError("could not draw a full-rank metric transform");
}

std::size_t matrix_rank(std::span<const double> row_major, std::size_t rows, std::size_t cols) {
  std::vector<double> a(row_major.begin(), row_major.end());
  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  const double tol = 1e-10 * std::max(scale, 1.0) * static_cast<double>(std::max(rows, cols));
  std::size_t rank = 0;
  for (std::size_t col = 0; col < cols && rank < rows; ++col) {
    std::size_t pivot = rank;
    for (std::size_t r = rank + 1; r < rows; ++r)
      if (std::abs(a[r * cols + col]) > std::abs(a[pivot * cols + col])) pivot = r;
    if (std::abs(a[pivot * cols + col]) <= tol) continue;
    for (std::size_t c = 0; c < cols; ++c) std::swap(a[pivot * cols + c], a[rank * cols + c]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double f = a[r * cols + col] / a[rank * cols + col];
      for (std::size_t c = col; c < cols; ++c) a[r * cols + c] -= f * a[rank * cols + c];
    }
    ++rank;
  }
  return rank;
}

EmbeddingSet gen_embeddings(std::size_t n, std::size_t d, std::size_t n_identities, std::uint64_t seed) {
  if (d == 0 || n_identities == 0 || n < n_identities) {
    throw ValidationError("need n >= n_identities >= 1 and d >= 1");
  }
  Rng rng(derive_seed(seed, "embeddings"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<EmbeddingRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingRecord rec{numbered("item", i), numbered("id", i % n_identities), std::vector<double>(d)};
    // Redraw the (measure-zero) all-zero vector rather than fail normalization.
    do {
      for (double& x : rec.vector) x = gauss(rng);
    } while (std::all_of(rec.vector.begin(), rec.vector.end(), [](double x) { return x == 0.0; }));
    records.push_back(std::move(rec));
  }
  return EmbeddingSet(d, std::move(records), /*normalize=*/true);
}

std::vector<WorkerModel> make_workers(std::size_t count, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("worker noise sigma must be finite and non-negative");
  }
  std::vector<WorkerModel> workers;
  for (std::size_t w = 0; w < count; ++w) {
    char id[32];
    std::snprintf(id, sizeof id, "worker-%03zu", w);
    workers.push_back({id, noise_sigma, derive_seed(seed, id)});
  }
  return workers;
}

WorkerRanking simulate_worker_ranking(const RankingTask& task, const EmbeddingSet& set,
                                      const GroundTruthMetric& metric, const WorkerModel& worker) {
  const auto& query = set.find(task.query_id).vector;
  Rng rng(derive_seed(worker.seed, task.task_id));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> perceived(task.candidates.size());
  for (std::size_t c = 0; c < task.candidates.size(); ++c) {
    perceived[c] = metric.distance(query, set.find(task.candidates[c]).vector) + worker.noise_sigma * noise(rng);
  }
  std::vector<std::size_t> idx(task.candidates.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return perceived[a] < perceived[b]; });
  WorkerRanking out{worker.worker_id, task.task_id, {}};
  for (std::size_t i : idx) out.order.push_back(task.candidates[i]);
  return out;
}

std::vector<WorkerRanking> simulate_rankings(std::span<const RankingTask> tasks, const EmbeddingSet& set,
                                             const GroundTruthMetric& metric, std::span<const WorkerModel> workers) {
  std::vector<WorkerRanking> out;
  out.reserve(tasks.size() * workers.size());
  for (const auto& task : tasks)
    for (const auto& w : workers) out.push_back(simulate_worker_ranking(task, set, metric, w));
  return out;
}

WorkerRanking lazy_ranking(const RankingTask& task, const std::string& worker_id) {
  return {worker_id, task.task_id, task.presented()};
}

std::vector<PairVote> simulate_pair_votes(std::span<const PairOfPairsTask> tasks, const EmbeddingSet& set,
                                          const GroundTruthMetric& metric, std::span<const WorkerModel> workers) {
  std::vector<PairVote> votes;
  votes.reserve(tasks.size() * workers.size());
  for (const auto& task : tasks) {
    const double da = metric.distance(set.find(task.pair_a.first).vector, set.find(task.pair_a.second).vector);
    const double db = metric.distance(set.find(task.pair_b.first).vector, set.find(task.pair_b.second).vector);
    for (const auto& w : workers) {
      Rng rng(derive_seed(w.seed, task.task_id));
      std::normal_distribution<double> noise(0.0, 1.0);
      const double pa = da + w.noise_sigma * noise(rng);
      const double pb = db + w.noise_sigma * noise(rng);
      votes.push_back({task.task_id, w.worker_id, pa <= pb ? PairChoice::A : PairChoice::B});
    }
  }
  return votes;
}

ProjectionHead oracle_head(const GroundTruthMetric& metric) {
  return {metric.d_in, metric.d_out, metric.transform, std::vector<double>(metric.d_out, 0.0), false};
}

Benchmark make_benchmark(const BenchmarkConfig& config) {
  Benchmark b;
  b.base = gen_embeddings(config.n_items, config.dim, config.n_identities, config.seed);
  b.metric = GroundTruthMetric::random(config.dim, config.metric_dim, config.seed);
  std::tie(b.train_set, b.test_set) = split_by_identity(b.base, config.holdout_fraction, config.seed);
  const auto workers = make_workers(config.n_workers, config.noise_sigma, config.seed);

  const auto train_queries = sample_queries(b.train_set, config.train_tasks, derive_seed(config.seed, "train"));
  const auto test_queries = sample_queries(b.test_set, config.test_tasks, derive_seed(config.seed, "test"));
  b.train_tasks = build_ranking_tasks(b.train_set, train_queries, config.n_candidates, config.seed);
  b.test_tasks = build_ranking_tasks(b.test_set, test_queries, config.n_candidates, config.seed);

  const auto train_rankings = simulate_rankings(b.train_tasks, b.base, b.metric, workers);
  const auto test_rankings = simulate_rankings(b.test_tasks, b.base, b.metric, workers);
  b.train_hard = extract_all_hard_triplets(b.train_tasks, train_rankings);
  b.test_hard = extract_all_hard_triplets(b.test_tasks, test_rankings);
  for (const auto& task : b.test_tasks) b.test_aggregated.push_back(average_positions(task, test_rankings));

  b.test_easy = sample_easy_triplets(b.test_set, b.test_tasks, b.test_hard.size(), derive_seed(config.seed, "test-easy"));
  return b;
}

void save_metric(const GroundTruthMetric& metric, const std::filesystem::path& path) {
  write_json_file(path, {{"format", "lookalike-ground-truth-metric"},
                         {"version", 1},
                         {"d_in", metric.d_in},
                         {"d_out", metric.d_out},
                         {"transform", metric.transform}});
}

GroundTruthMetric load_metric(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  GroundTruthMetric m;
  try {
    if (j.at("format").get<std::string>() != "lookalike-ground-truth-metric") {
      throw ValidationError("'" + path.string() + "' is not a metric file");
    }
    m.d_in = j.at("d_in").get<std::size_t>();
    m.d_out = j.at("d_out").get<std::size_t>();
    m.transform = j.at("transform").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed metric file '" + path.string() + "': " + e.what());
  }
  if (m.d_in == 0 || m.d_out == 0 || m.transform.size() != m.d_in * m.d_out) {
    throw ValidationError("metric transform shape does not match its dimensions");
  }
  return m;
}

}  // namespace lookalike
