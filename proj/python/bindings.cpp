#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/errors.hpp"
#include "lookalike/evaluation.hpp"
#include "lookalike/pair_binning.hpp"
#include "lookalike/synthetic.hpp"
#include "lookalike/task_builder.hpp"
#include "lookalike/trainer.hpp"

namespace py = pybind11;
using namespace lookalike;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Perceptual face-similarity toolkit (C++ core).";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", error);
  py::register_exception<ValidationError>(m, "ValidationError", error);
  py::register_exception<DimensionError>(m, "DimensionError", error);
  py::register_exception<NotFoundError>(m, "NotFoundError", error);
  py::register_exception<NumericError>(m, "NumericError", error);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", error);
  py::register_exception<ShortfallError>(m, "ShortfallError", error);
  py::register_exception<EmptyPoolError>(m, "EmptyPoolError", error);

  py::class_<EmbeddingRecord>(m, "EmbeddingRecord")
      .def(py::init<std::string, std::string, std::vector<double>>(), py::arg("item_id"), py::arg("identity"),
           py::arg("vector"))
      .def_readwrite("item_id", &EmbeddingRecord::item_id)
      .def_readwrite("identity", &EmbeddingRecord::identity)
      .def_readwrite("vector", &EmbeddingRecord::vector);

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def(py::init([](std::vector<EmbeddingRecord> records, bool normalize) {
             return EmbeddingSet::from_records(std::move(records), normalize);
           }),
           py::arg("records"), py::arg("normalize") = true)
      .def_property_readonly("dim", &EmbeddingSet::dim)
      .def_property_readonly("normalized", &EmbeddingSet::normalized)
      .def_property_readonly("records", &EmbeddingSet::records)
      .def("find", &EmbeddingSet::find, py::arg("item_id"))
      .def("__contains__", &EmbeddingSet::contains)
      .def("__len__", &EmbeddingSet::size);

  py::class_<Neighbor>(m, "Neighbor")
      .def_readonly("item_id", &Neighbor::item_id)
      .def_readonly("distance", &Neighbor::distance)
      .def("__repr__", [](const Neighbor& n) { return "Neighbor(" + n.item_id + ", " + std::to_string(n.distance) + ")"; });

  m.def("load_embeddings", &load_embeddings, py::arg("path"), py::arg("normalize") = true);
  m.def("save_embeddings", &save_embeddings, py::arg("set"), py::arg("path"));
  m.def("euclidean_distance", [](const std::vector<double>& a, const std::vector<double>& b) {
    return euclidean_distance(a, b);
  });
  m.def("top_k_similar", &top_k_similar, py::arg("set"), py::arg("query_id"), py::arg("k"),
        py::arg("exclude_same_identity") = true);

  py::class_<RankingTask>(m, "RankingTask")
      .def(py::init<>())
      .def_readwrite("task_id", &RankingTask::task_id)
      .def_readwrite("query_id", &RankingTask::query_id)
      .def_readwrite("candidates", &RankingTask::candidates)
      .def_readwrite("presentation_order", &RankingTask::presentation_order)
      .def("presented", &RankingTask::presented);

  m.def("sample_queries", &sample_queries, py::arg("set"), py::arg("n"), py::arg("seed"));
  m.def(
      "build_ranking_tasks",
      [](const EmbeddingSet& set, const std::vector<std::string>& queries, std::size_t n_candidates,
         std::uint64_t seed) { return build_ranking_tasks(set, queries, n_candidates, seed); },
      py::arg("set"), py::arg("query_ids"), py::arg("n_candidates") = kDefaultCandidates, py::arg("seed") = 0);
  m.def("split_by_identity", &split_by_identity, py::arg("set"), py::arg("holdout_fraction"), py::arg("seed"));
  m.def("load_ranking_tasks", &load_ranking_tasks, py::arg("path"));
  m.def(
      "save_ranking_tasks",
      [](const std::vector<RankingTask>& t, const std::filesystem::path& p) { save_ranking_tasks(t, p); },
      py::arg("tasks"), py::arg("path"));

  py::class_<WorkerRanking>(m, "WorkerRanking")
      .def(py::init<std::string, std::string, std::vector<std::string>>(), py::arg("worker_id"), py::arg("task_id"),
           py::arg("order"))
      .def_readwrite("worker_id", &WorkerRanking::worker_id)
      .def_readwrite("task_id", &WorkerRanking::task_id)
      .def_readwrite("order", &WorkerRanking::order)
      .def(py::self == py::self);

  py::enum_<TripletKind>(m, "TripletKind").value("HARD", TripletKind::Hard).value("EASY", TripletKind::Easy);

  py::class_<Triplet>(m, "Triplet")
      .def(py::init<std::string, std::string, std::string, double, TripletKind>(), py::arg("anchor"),
           py::arg("positive"), py::arg("negative"), py::arg("confidence") = 1.0,
           py::arg("kind") = TripletKind::Hard)
      .def_readwrite("anchor", &Triplet::anchor)
      .def_readwrite("positive", &Triplet::positive)
      .def_readwrite("negative", &Triplet::negative)
      .def_readwrite("confidence", &Triplet::confidence)
      .def_readwrite("kind", &Triplet::kind);

  py::class_<AggregatedTask>(m, "AggregatedTask")
      .def_readonly("task_id", &AggregatedTask::task_id)
      .def_readonly("query_id", &AggregatedTask::query_id)
      .def_readonly("candidates", &AggregatedTask::candidates)
      .def_readonly("avg_position", &AggregatedTask::avg_position)
      .def_readonly("n_workers", &AggregatedTask::n_workers);

  m.def("rearranged_count", &rearranged_count, py::arg("task"), py::arg("ranking"));
  m.def(
      "filter_lazy_workers",
      [](const std::vector<WorkerRanking>& r, const std::vector<RankingTask>& t, double min_avg) {
        return filter_lazy_workers(r, t, min_avg);
      },
      py::arg("rankings"), py::arg("tasks"), py::arg("min_avg_rearranged") = kDefaultMinRearranged);
  m.def(
      "average_positions",
      [](const RankingTask& t, const std::vector<WorkerRanking>& r) { return average_positions(t, r); },
      py::arg("task"), py::arg("rankings"));
  m.def(
      "extract_hard_triplets",
      [](const std::vector<RankingTask>& t, const std::vector<WorkerRanking>& r) {
        return extract_all_hard_triplets(t, r);
      },
      py::arg("tasks"), py::arg("rankings"));
  m.def(
      "sample_easy_triplets",
      [](const EmbeddingSet& s, const std::vector<RankingTask>& t, std::size_t count, std::uint64_t seed) {
        return sample_easy_triplets(s, t, count, seed);
      },
      py::arg("set"), py::arg("tasks"), py::arg("count"), py::arg("seed") = 0);
  m.def("load_rankings", &load_rankings, py::arg("path"));
  m.def("load_triplets", &load_triplets, py::arg("path"));

  py::class_<ProjectionHead>(m, "ProjectionHead")
      .def_static("identity", &ProjectionHead::identity, py::arg("d_in"), py::arg("d_out"),
                  py::arg("normalize_output") = true)
      .def_static("near_identity", &ProjectionHead::near_identity, py::arg("d_in"), py::arg("d_out"),
                  py::arg("normalize_output") = true, py::arg("noise") = 1e-3, py::arg("seed") = 0)
      .def_readonly("d_in", &ProjectionHead::d_in)
      .def_readonly("d_out", &ProjectionHead::d_out)
      .def_readwrite("weights", &ProjectionHead::weights)
      .def_readwrite("bias", &ProjectionHead::bias)
      .def_readwrite("normalize_output", &ProjectionHead::normalize_output)
      .def("forward", [](const ProjectionHead& h, const std::vector<double>& x) { return forward(h, x); });

  m.def("project", &project, py::arg("head"), py::arg("set"));
  m.def("load_head", &load_head, py::arg("path"));
  m.def("save_head", &save_head, py::arg("head"), py::arg("path"));
  m.def(
      "triplet_loss_gradient",
      [](const ProjectionHead& h, const std::vector<double>& a, const std::vector<double>& p,
         const std::vector<double>& n, double alpha) {
        const auto lg = triplet_loss_gradient(h, a, p, n, alpha);
        return py::make_tuple(lg.loss, lg.gradient.weights, lg.gradient.bias);
      },
      py::arg("head"), py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("alpha") = 0.05);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("easy_prob", &TrainConfig::easy_prob)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
      .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
      .def_readwrite("adam_epsilon", &TrainConfig::adam_epsilon)
      .def_readwrite("d_out", &TrainConfig::d_out)
      .def_readwrite("normalize_output", &TrainConfig::normalize_output)
      .def_readwrite("init_noise", &TrainConfig::init_noise);

  m.def(
      "train",
      [](const EmbeddingSet& base, const std::vector<Triplet>& hard, const std::vector<RankingTask>& tasks,
         const TrainConfig& config) {
        auto r = train(base, hard, tasks, config);
        return py::make_tuple(std::move(r.head), std::move(r.epoch_loss));
      },
      py::arg("base"), py::arg("hard_triplets"), py::arg("tasks"), py::arg("config") = TrainConfig{},
      "Returns (head, per-epoch mean loss).");

  m.def(
      "evaluate_json",
      [](const ProjectionHead& head, const EmbeddingSet& base, const std::vector<Triplet>& hard,
         const std::vector<Triplet>& easy, const std::vector<AggregatedTask>& tasks) {
        return report_to_json(evaluate(head, base, hard, easy, tasks)).dump();
      },
      py::arg("head"), py::arg("base"), py::arg("hard_triplets"), py::arg("easy_triplets"), py::arg("tasks"));
  m.def(
      "ndcg",
      [](const std::vector<std::string>& order, const std::vector<std::string>& candidates,
         const std::vector<double>& relevance) {
        return ndcg(order, RelevanceProfile{candidates, relevance});
      },
      py::arg("model_order"), py::arg("candidates"), py::arg("relevance"));
  m.def(
      "roc_auc",
      [](const std::vector<double>& distances, const std::vector<bool>& same_identity) {
        if (distances.size() != same_identity.size()) throw ValidationError("length mismatch");
        std::vector<ScoredPair> s;
        for (std::size_t i = 0; i < distances.size(); ++i) s.push_back({distances[i], same_identity[i]});
        return roc_auc(s);
      },
      py::arg("distances"), py::arg("same_identity"));

  py::class_<GroundTruthMetric>(m, "GroundTruthMetric")
      .def_static("identity", &GroundTruthMetric::identity, py::arg("d"))
      .def_static("random", &GroundTruthMetric::random, py::arg("d_in"), py::arg("d_out"), py::arg("seed"))
      .def_readonly("d_in", &GroundTruthMetric::d_in)
      .def_readonly("d_out", &GroundTruthMetric::d_out)
      .def("distance", [](const GroundTruthMetric& g, const std::vector<double>& a, const std::vector<double>& b) {
        return g.distance(a, b);
      });

  py::class_<WorkerModel>(m, "WorkerModel")
      .def_readonly("worker_id", &WorkerModel::worker_id)
      .def_readonly("noise_sigma", &WorkerModel::noise_sigma);

  m.def("gen_embeddings", &gen_embeddings, py::arg("n"), py::arg("d"), py::arg("n_identities"), py::arg("seed") = 0);
  m.def("make_workers", &make_workers, py::arg("count"), py::arg("noise_sigma"), py::arg("seed") = 0);
  m.def(
      "simulate_rankings",
      [](const std::vector<RankingTask>& t, const EmbeddingSet& s, const GroundTruthMetric& g,
         const std::vector<WorkerModel>& w) { return simulate_rankings(t, s, g, w); },
      py::arg("tasks"), py::arg("set"), py::arg("metric"), py::arg("workers"));
  m.def("oracle_head", &oracle_head, py::arg("metric"));

  m.def(
      "bin_analysis",
      [](const EmbeddingSet& set, std::size_t n_bins, std::size_t per_cell, double threshold, std::size_t workers,
         double noise, std::uint64_t seed) {
        const auto edges = quantile_edges(set, n_bins);
        const auto tasks = build_pair_comparison_tasks(bin_pairs(set, edges), per_cell, seed);
        const auto votes =
            simulate_pair_votes(tasks, set, GroundTruthMetric::identity(set.dim()), make_workers(workers, noise, seed));
        const auto matrix = aggregate_pair_votes(tasks, votes, threshold, edges);
        std::vector<std::vector<std::int64_t>> rows(matrix.bin_count(), std::vector<std::int64_t>(matrix.bin_count()));
        for (std::size_t i = 0; i < matrix.bin_count(); ++i)
          for (std::size_t j = 0; j < matrix.bin_count(); ++j) rows[i][j] = matrix(i, j);
        std::vector<std::size_t> all(matrix.bin_count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return py::make_tuple(tasks.size(), rows, triangle_accuracy(matrix, all));
      },
      py::arg("set"), py::arg("n_bins") = 10, py::arg("per_cell") = 100, py::arg("threshold") = 0.8,
      py::arg("workers") = 10, py::arg("noise") = 0.0, py::arg("seed") = 0,
      "Simulated distance-bin study. Returns (task count, bin matrix rows, triangle accuracy).");
}
