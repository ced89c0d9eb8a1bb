#include "lookalike/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/errors.hpp"
#include "lookalike/evaluation.hpp"
#include "lookalike/jsonl.hpp"
#include "lookalike/pair_binning.hpp"
#include "lookalike/rng.hpp"
#include "lookalike/service.hpp"
#include "lookalike/synthetic.hpp"
#include "lookalike/task_builder.hpp"
#include "lookalike/trainer.hpp"

namespace lookalike {

namespace {

using std::filesystem::path;

struct GenOptions {
  BenchmarkConfig bench;
  path embeddings_out;
  path metric_out;
  std::optional<path> oracle_head_out;
};

struct TaskOptions {
  path embeddings;
  path tasks_out;
  std::size_t n_tasks = 400;
  std::size_t candidates = kDefaultCandidates;
  double holdout_fraction = 0.0;
  std::optional<path> train_embeddings_out;
  std::optional<path> test_embeddings_out;
  std::optional<path> test_tasks_out;
  std::size_t test_n_tasks = 100;
  std::uint64_t seed = 0;
};

struct SimulateOptions {
  path embeddings;
  std::optional<path> metric;
  path tasks;
  path rankings_out;
  std::size_t workers = 10;
  double noise = 0.3;
  std::size_t lazy_workers = 0;
  std::uint64_t seed = 0;
};

struct FilterOptions {
  path rankings;
  path tasks;
  path out;
  double min_rearranged = kDefaultMinRearranged;
  std::uint64_t seed = 0;
};

struct MineOptions {
  path tasks;
  path rankings;
  path out;
  std::optional<path> embeddings;
  std::optional<path> easy_out;
  std::size_t easy_count = 0;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  path embeddings;
  path triplets;
  std::optional<path> tasks;
  path head_out;
  std::optional<path> loss_out;
  std::size_t d_out = 0;
  bool no_normalize_output = false;
  TrainConfig config;
};

struct EvalOptions {
  path embeddings;
  std::optional<path> head;
  path hard;
  std::optional<path> easy;
  std::optional<path> tasks;
  std::optional<path> rankings;
  path report_out;
  std::optional<path> tables_dir;
  std::uint64_t seed = 0;
};

struct BinOptions {
  path embeddings;
  std::size_t bins = 10;
  std::size_t per_cell = 100;
  double threshold = 0.8;
  std::optional<path> votes;
  std::optional<path> metric;
  std::size_t workers = 10;
  double noise = 0.0;
  path tasks_out;
  std::optional<path> votes_out;
  path matrix_out;
  std::optional<path> summary_out;
  std::vector<std::size_t> triangle_bins;
  std::uint64_t seed = 0;
};

struct ServeOptions {
  ServiceConfig service;
  std::uint64_t seed = 0;
};

void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
}

int gen_synthetic(const GenOptions& o, std::ostream& out) {
  const auto& b = o.bench;
  auto set = gen_embeddings(b.n_items, b.dim, b.n_identities, b.seed);
  auto metric = GroundTruthMetric::random(b.dim, b.metric_dim, b.seed);
  save_embeddings(set, o.embeddings_out);
  save_metric(metric, o.metric_out);
  if (o.oracle_head_out) save_head(oracle_head(metric), *o.oracle_head_out);
  out << "wrote " << set.size() << " embeddings (d=" << set.dim() << ") and a " << metric.d_out << "x" << metric.d_in
      << " metric\n";
  return kExitOk;
}

int build_tasks(const TaskOptions& o, std::ostream& out) {
  if (o.holdout_fraction < 0.0 || o.holdout_fraction >= 1.0) {
    throw ValidationError("--holdout-fraction must lie in [0, 1)");
  }
  const bool split = o.holdout_fraction > 0.0;
  if (split && (!o.train_embeddings_out || !o.test_embeddings_out || !o.test_tasks_out)) {
    throw ValidationError(
        "--holdout-fraction requires --train-embeddings-out, --test-embeddings-out and --test-tasks-out");
  }
  const auto base = load_embeddings(o.embeddings);
  if (!split) {
    const auto queries = sample_queries(base, o.n_tasks, derive_seed(o.seed, "train"));
    const auto tasks = build_ranking_tasks(base, queries, o.candidates, o.seed);
    save_ranking_tasks(tasks, o.tasks_out);
    out << "wrote " << tasks.size() << " tasks\n";
    return kExitOk;
  }
  const auto [kept, held] = split_by_identity(base, o.holdout_fraction, o.seed);
  const auto train_q = sample_queries(kept, o.n_tasks, derive_seed(o.seed, "train"));
  const auto test_q = sample_queries(held, o.test_n_tasks, derive_seed(o.seed, "test"));
  const auto train_tasks = build_ranking_tasks(kept, train_q, o.candidates, o.seed);
  const auto test_tasks = build_ranking_tasks(held, test_q, o.candidates, o.seed);
  save_embeddings(kept, *o.train_embeddings_out);
  save_embeddings(held, *o.test_embeddings_out);
  save_ranking_tasks(train_tasks, o.tasks_out);
  save_ranking_tasks(test_tasks, *o.test_tasks_out);
  out << "split " << kept.size() << "/" << held.size() << " items; wrote " << train_tasks.size() << " train and "
      << test_tasks.size() << " test tasks\n";
  return kExitOk;
}

int simulate_workers(const SimulateOptions& o, std::ostream& out) {
  const auto set = load_embeddings(o.embeddings);
  const auto metric = o.metric ? load_metric(*o.metric) : GroundTruthMetric::identity(set.dim());
  if (metric.d_in != set.dim()) {
    throw DimensionError("metric expects dimension " + std::to_string(metric.d_in) + " but embeddings have " +
                         std::to_string(set.dim()));
  }
  const auto tasks = load_ranking_tasks(o.tasks);
  for (const auto& t : tasks) validate_task(t, set);
  const auto workers = make_workers(o.workers, o.noise, o.seed);
  auto rankings = simulate_rankings(tasks, set, metric, workers);
  for (std::size_t l = 0; l < o.lazy_workers; ++l) {
    char id[32];
    std::snprintf(id, sizeof id, "lazy-%03zu", l);
    for (const auto& t : tasks) rankings.push_back(lazy_ranking(t, id));
  }
  save_rankings(rankings, o.rankings_out);
  out << "wrote " << rankings.size() << " rankings from " << o.workers + o.lazy_workers << " workers\n";
  return kExitOk;
}

int filter_workers(const FilterOptions& o, std::ostream& out) {
  const auto rankings = load_rankings(o.rankings);
  const auto tasks = load_ranking_tasks(o.tasks);
  const auto kept = filter_lazy_workers(rankings, tasks, o.min_rearranged);
  save_rankings(kept, o.out);
  out << "kept " << kept.size() << " of " << rankings.size() << " rankings\n";
  return kExitOk;
}

int mine_triplets(const MineOptions& o, std::ostream& out) {
  if (o.easy_out && !o.embeddings) {
    throw ValidationError("--easy-out requires --embeddings");
  }
  const auto tasks = load_ranking_tasks(o.tasks);
  const auto rankings = load_rankings(o.rankings);
  const auto hard = extract_all_hard_triplets(tasks, rankings);
  save_triplets(hard, o.out);
  out << "wrote " << hard.size() << " hard triplets\n";
  if (o.easy_out) {
    const auto set = load_embeddings(*o.embeddings);
    const std::size_t n = o.easy_count ? o.easy_count : hard.size();
    const auto easy = sample_easy_triplets(set, tasks, n, derive_seed(o.seed, "easy"));
    save_triplets(easy, *o.easy_out);
    out << "wrote " << easy.size() << " easy triplets\n";
  }
  return kExitOk;
}

int train_cmd(TrainOptions o, std::ostream& out) {
  o.config.d_out = o.d_out;
  o.config.normalize_output = !o.no_normalize_output;
  o.config.validate();
  if (o.config.easy_prob > 0.0 && !o.tasks) {
    throw ValidationError("--easy-prob > 0 requires --tasks to draw easy triplets from");
  }
  const auto base = load_embeddings(o.embeddings);
  const auto hard = load_triplets(o.triplets);
  std::vector<RankingTask> tasks;
  if (o.tasks) tasks = load_ranking_tasks(*o.tasks);
  const auto result = train(base, hard, tasks, o.config);
  save_head(result.head, o.head_out);
  if (o.loss_out) write_loss_curve_csv(result.epoch_loss, *o.loss_out);
  out << "trained " << o.config.epochs << " epochs on " << hard.size() << " hard triplets; final mean loss "
      << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  return kExitOk;
}

int evaluate_cmd(const EvalOptions& o, std::ostream& out) {
  if (o.rankings.has_value() != o.tasks.has_value()) {
    throw ValidationError("--tasks and --rankings must be given together");
  }
  const auto base = load_embeddings(o.embeddings);
  const auto head = o.head ? load_head(*o.head) : ProjectionHead::identity(base.dim(), base.dim(), false);
  const auto hard = load_triplets(o.hard);
  std::vector<Triplet> easy;
  if (o.easy) easy = load_triplets(*o.easy);
  std::vector<AggregatedTask> aggregated;
  if (o.tasks) {
    const auto tasks = load_ranking_tasks(*o.tasks);
    const auto rankings = load_rankings(*o.rankings);
    for (const auto& t : tasks) {
      const bool any = std::any_of(rankings.begin(), rankings.end(),
                                   [&](const WorkerRanking& r) { return r.task_id == t.task_id; });
      if (any) aggregated.push_back(average_positions(t, rankings));
    }
  }
  const auto report = evaluate(head, base, hard, easy, aggregated);
  write_json_file(o.report_out, report_to_json(report));
  if (o.tables_dir) write_report_tables(report, *o.tables_dir);
  out << "hard " << report.hard_accuracy << " easy " << report.easy_accuracy << " total " << report.total;
  if (report.ndcg_tasks) out << " ndcg " << report.mean_ndcg;
  out << "\n";
  return kExitOk;
}

int bin_analysis(const BinOptions& o, std::ostream& out) {
  if (o.bins < 2) throw ValidationError("--bins must be at least 2");
  if (!(o.threshold > 0.5 && o.threshold <= 1.0)) throw ValidationError("--threshold must lie in (0.5, 1]");
  if (o.votes && o.metric) throw ValidationError("--votes and --metric are mutually exclusive");
  for (std::size_t b : o.triangle_bins) {
    if (b >= o.bins) throw ValidationError("--triangle-bins entry " + std::to_string(b) + " is out of range");
  }
  const auto set = load_embeddings(o.embeddings);
  const auto edges = quantile_edges(set, o.bins);
  const auto binned = bin_pairs(set, edges);
  const auto tasks = build_pair_comparison_tasks(binned, o.per_cell, o.seed);
  save_pair_tasks(tasks, o.tasks_out);

  std::vector<PairVote> votes;
  if (o.votes) {
    votes = load_pair_votes(*o.votes);
  } else {
    const auto metric = o.metric ? load_metric(*o.metric) : GroundTruthMetric::identity(set.dim());
    const auto workers = make_workers(o.workers, o.noise, o.seed);
    votes = simulate_pair_votes(tasks, set, metric, workers);
  }
  if (o.votes_out) save_pair_votes(votes, *o.votes_out);

  const auto matrix = aggregate_pair_votes(tasks, votes, o.threshold, edges);
  write_bin_matrix_csv(matrix, o.matrix_out);
  std::vector<std::size_t> subset = o.triangle_bins;
  if (subset.empty()) {
    subset.resize(o.bins);
    for (std::size_t i = 0; i < o.bins; ++i) subset[i] = i;
  }
  const double acc = triangle_accuracy(matrix, subset);
  if (o.summary_out) {
    write_json_file(*o.summary_out, {{"tasks", tasks.size()},
                                     {"votes", votes.size()},
                                     {"edges", edges},
                                     {"threshold", o.threshold},
                                     {"triangle_bins", subset},
                                     {"triangle_accuracy", acc}});
  }
  out << tasks.size() << " pair-of-pairs tasks; triangle accuracy " << acc << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perceptual face-similarity toolkit: synthetic data, annotation, training and evaluation", "lookalike"};
  app.set_config("--config", "", "Optional TOML/INI file with flag defaults");
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate synthetic embeddings and a hidden perceptual metric");
  gen_cmd->add_option("--n", gen.bench.n_items, "Number of items")->capture_default_str();
  gen_cmd->add_option("--dim", gen.bench.dim, "Embedding dimension")->capture_default_str();
  gen_cmd->add_option("--identities", gen.bench.n_identities, "Number of identities")->capture_default_str();
  gen_cmd->add_option("--metric-dim", gen.bench.metric_dim, "Output dimension of the hidden metric")
      ->capture_default_str();
  gen_cmd->add_option("--embeddings-out", gen.embeddings_out, "Embeddings JSONL to write")->required();
  gen_cmd->add_option("--metric-out", gen.metric_out, "Metric JSON to write")->required();
  gen_cmd->add_option("--oracle-head-out", gen.oracle_head_out, "Also write a head reproducing the metric exactly");
  add_seed(gen_cmd, gen.bench.seed);

  TaskOptions tk;
  auto* task_cmd = app.add_subcommand("build-tasks", "Build six-candidate ranking tasks");
  task_cmd->add_option("--embeddings", tk.embeddings, "Embeddings JSONL")->required();
  task_cmd->add_option("--tasks-out", tk.tasks_out, "Ranking tasks JSONL to write")->required();
  task_cmd->add_option("--n-tasks", tk.n_tasks, "Number of tasks (query items)")->capture_default_str();
  task_cmd->add_option("--candidates", tk.candidates, "Candidates per task")->capture_default_str();
  task_cmd->add_option("--holdout-fraction", tk.holdout_fraction, "Share of identities held out for testing")
      ->capture_default_str();
  task_cmd->add_option("--train-embeddings-out", tk.train_embeddings_out, "Embeddings of kept identities");
  task_cmd->add_option("--test-embeddings-out", tk.test_embeddings_out, "Embeddings of held-out identities");
  task_cmd->add_option("--test-tasks-out", tk.test_tasks_out, "Tasks over held-out identities");
  task_cmd->add_option("--test-n-tasks", tk.test_n_tasks, "Number of held-out tasks")->capture_default_str();
  add_seed(task_cmd, tk.seed);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate-workers", "Simulate noisy workers ranking tasks");
  sim_cmd->add_option("--embeddings", sim.embeddings, "Embeddings JSONL")->required();
  sim_cmd->add_option("--metric", sim.metric, "Hidden metric JSON (default: base distance)");
  sim_cmd->add_option("--tasks", sim.tasks, "Ranking tasks JSONL")->required();
  sim_cmd->add_option("--rankings-out", sim.rankings_out, "Rankings JSONL to write")->required();
  sim_cmd->add_option("--workers", sim.workers, "Number of simulated workers")->capture_default_str();
  sim_cmd->add_option("--noise", sim.noise, "Per-candidate Gaussian noise sigma")->capture_default_str();
  sim_cmd->add_option("--lazy-workers", sim.lazy_workers, "Extra workers who submit the presented order")
      ->capture_default_str();
  add_seed(sim_cmd, sim.seed);

  FilterOptions flt;
  auto* flt_cmd = app.add_subcommand("filter-workers", "Drop every ranking of workers who barely rearrange");
  flt_cmd->add_option("--rankings", flt.rankings, "Rankings JSONL")->required();
  flt_cmd->add_option("--tasks", flt.tasks, "Ranking tasks JSONL")->required();
  flt_cmd->add_option("--out", flt.out, "Filtered rankings JSONL to write")->required();
  flt_cmd->add_option("--min-rearranged", flt.min_rearranged, "Minimum mean number of moved candidates")
      ->capture_default_str();
  add_seed(flt_cmd, flt.seed);

  MineOptions mine;
  auto* mine_cmd = app.add_subcommand("mine-triplets", "Extract hard triplets (and optionally easy test triplets)");
  mine_cmd->add_option("--tasks", mine.tasks, "Ranking tasks JSONL")->required();
  mine_cmd->add_option("--rankings", mine.rankings, "Rankings JSONL")->required();
  mine_cmd->add_option("--out", mine.out, "Hard triplets JSONL to write")->required();
  mine_cmd->add_option("--embeddings", mine.embeddings, "Embeddings JSONL (needed for easy triplets)");
  mine_cmd->add_option("--easy-out", mine.easy_out, "Easy triplets JSONL to write");
  mine_cmd->add_option("--easy-count", mine.easy_count, "Easy triplets to sample (0: as many as hard)")
      ->capture_default_str();
  add_seed(mine_cmd, mine.seed);

  TrainOptions tr;
  auto* tr_cmd = app.add_subcommand("train", "Fine-tune a projection head with the triplet hinge loss");
  tr_cmd->add_option("--embeddings", tr.embeddings, "Embeddings JSONL")->required();
  tr_cmd->add_option("--triplets", tr.triplets, "Hard triplets JSONL")->required();
  tr_cmd->add_option("--tasks", tr.tasks, "Ranking tasks JSONL, source of easy triplets");
  tr_cmd->add_option("--head-out", tr.head_out, "Head JSON to write")->required();
  tr_cmd->add_option("--loss-out", tr.loss_out, "Loss curve CSV to write");
  tr_cmd->add_option("--alpha", tr.config.alpha, "Triplet margin")->capture_default_str();
  tr_cmd->add_option("--lr", tr.config.learning_rate, "Adam learning rate")->capture_default_str();
  tr_cmd->add_option("--batch-size", tr.config.batch_size, "Triplets per batch")->capture_default_str();
  tr_cmd->add_option("--easy-prob", tr.config.easy_prob, "Probability a batch slot holds an easy triplet")
      ->capture_default_str();
  tr_cmd->add_option("--epochs", tr.config.epochs, "Training epochs")->capture_default_str();
  tr_cmd->add_option("--beta1", tr.config.adam_beta1, "Adam beta1")->capture_default_str();
  tr_cmd->add_option("--beta2", tr.config.adam_beta2, "Adam beta2")->capture_default_str();
  tr_cmd->add_option("--adam-epsilon", tr.config.adam_epsilon, "Adam epsilon")->capture_default_str();
  tr_cmd->add_option("--init-noise", tr.config.init_noise, "Std-dev of the near-identity initialisation")
      ->capture_default_str();
  tr_cmd->add_option("--d-out", tr.d_out, "Output dimension (0: same as input)")->capture_default_str();
  tr_cmd->add_flag("--no-normalize-output", tr.no_normalize_output, "Do not L2-normalize head outputs");
  add_seed(tr_cmd, tr.config.seed);

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Triplet accuracy, confidence bins, precision@k and NDCG");
  ev_cmd->add_option("--embeddings", ev.embeddings, "Embeddings JSONL")->required();
  ev_cmd->add_option("--head", ev.head, "Head JSON (default: identity)");
  ev_cmd->add_option("--hard", ev.hard, "Hard test triplets JSONL")->required();
  ev_cmd->add_option("--easy", ev.easy, "Easy test triplets JSONL");
  ev_cmd->add_option("--tasks", ev.tasks, "Test ranking tasks JSONL (for precision@k and NDCG)");
  ev_cmd->add_option("--rankings", ev.rankings, "Test rankings JSONL (for precision@k and NDCG)");
  ev_cmd->add_option("--report-out", ev.report_out, "Report JSON to write")->required();
  ev_cmd->add_option("--tables-dir", ev.tables_dir, "Directory for CSV tables");
  add_seed(ev_cmd, ev.seed);

  BinOptions bn;
  auto* bn_cmd = app.add_subcommand("bin-analysis", "Distance-bin pair-of-pairs study");
  bn_cmd->add_option("--embeddings", bn.embeddings, "Embeddings JSONL")->required();
  bn_cmd->add_option("--bins", bn.bins, "Number of distance bins")->capture_default_str();
  bn_cmd->add_option("--per-cell", bn.per_cell, "Tasks per bin pair")->capture_default_str();
  bn_cmd->add_option("--threshold", bn.threshold, "Agreement threshold")->capture_default_str();
  bn_cmd->add_option("--votes", bn.votes, "Collected votes JSONL (default: simulate)");
  bn_cmd->add_option("--metric", bn.metric, "Metric for simulated voters (default: base distance)");
  bn_cmd->add_option("--workers", bn.workers, "Simulated voters per task")->capture_default_str();
  bn_cmd->add_option("--noise", bn.noise, "Simulated voter noise sigma")->capture_default_str();
  bn_cmd->add_option("--tasks-out", bn.tasks_out, "Pair-of-pairs tasks JSONL to write")->required();
  bn_cmd->add_option("--votes-out", bn.votes_out, "Votes JSONL to write");
  bn_cmd->add_option("--matrix-out", bn.matrix_out, "Bin matrix CSV to write")->required();
  bn_cmd->add_option("--summary-out", bn.summary_out, "Summary JSON to write");
  bn_cmd->add_option("--triangle-bins", bn.triangle_bins, "Bins for triangle accuracy (default: all)")
      ->delimiter(',');
  add_seed(bn_cmd, bn.seed);

  ServeOptions sv;
  auto* sv_cmd = app.add_subcommand("serve", "Run the HTTP service");
  sv_cmd->add_option("--host", sv.service.host, "Listen address")->capture_default_str();
  sv_cmd->add_option("--port", sv.service.port, "Listen port")->capture_default_str();
  sv_cmd->add_option("--embeddings", sv.service.embeddings, "Embeddings JSONL")->required();
  sv_cmd->add_option("--head", sv.service.head, "Head JSON (default: base embeddings)");
  sv_cmd->add_option("--tasks", sv.service.tasks, "Ranking tasks JSONL")->required();
  sv_cmd->add_option("--rankings", sv.service.rankings, "Rankings JSONL, appended to")->required();
  sv_cmd->add_option("--static", sv.service.static_dir, "Directory served at /");
  sv_cmd->add_option("--quota", sv.service.quota, "Tasks per worker")->capture_default_str();
  add_seed(sv_cmd, sv.seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_synthetic(gen, out);
    if (*task_cmd) return build_tasks(tk, out);
    if (*sim_cmd) return simulate_workers(sim, out);
    if (*flt_cmd) return filter_workers(flt, out);
    if (*mine_cmd) return mine_triplets(mine, out);
    if (*tr_cmd) return train_cmd(tr, out);
    if (*ev_cmd) return evaluate_cmd(ev, out);
    if (*bn_cmd) return bin_analysis(bn, out);
    if (*sv_cmd) {
      serve(sv.service);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace lookalike
