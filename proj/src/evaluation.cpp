#include "lookalike/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "lookalike/errors.hpp"

namespace lookalike {

namespace {

constexpr std::size_t kDefaultTopK = 5;

double distance_in(const EmbeddingSet& space, const std::string& a, const std::string& b) {
  return euclidean_distance(space.find(a).vector, space.find(b).vector);
}

std::string number(double x) { return nlohmann::json(x).dump(); }

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot open '" + path.string() + "' for writing");
  }
  return out;
}

}  // namespace

double AccuracyCount::rate() const {
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(correct) / static_cast<double>(total);
}

RelevanceProfile RelevanceProfile::from(const AggregatedTask& task) {
  RelevanceProfile rel{task.candidates, {}};
  const double n = static_cast<double>(task.candidates.size());
  for (double pos : task.avg_position) rel.relevance.push_back(n - pos);
  return rel;
}

bool triplet_correct(const EmbeddingSet& space, const Triplet& t) {
  try {
    return distance_in(space, t.anchor, t.positive) < distance_in(space, t.anchor, t.negative);
  } catch (const NotFoundError& e) {
    throw ValidationError(e.what());
  }
}

TripletAccuracy triplet_accuracy(const ProjectionHead& head, const EmbeddingSet& base,
                                 std::span<const Triplet> triplets) {
  if (triplets.empty()) {
    throw ValidationError("triplet accuracy needs at least one triplet");
  }
  const EmbeddingSet space = project(head, base);
  TripletAccuracy acc;
  for (const auto& t : triplets) {
    auto& bucket = t.kind == TripletKind::Hard ? acc.hard : acc.easy;
    ++bucket.total;
    if (triplet_correct(space, t)) ++bucket.correct;
  }
  acc.accuracy = static_cast<double>(acc.hard.correct + acc.easy.correct) / static_cast<double>(triplets.size());
  return acc;
}

std::vector<ConfidenceBin> accuracy_by_confidence(const ProjectionHead& head, const EmbeddingSet& base,
                                                  std::span<const Triplet> hard_triplets,
                                                  std::span<const double> bin_edges) {
  if (bin_edges.size() < 2) {
    throw ValidationError("confidence binning needs at least two edges");
  }
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1])) throw ValidationError("confidence edges must be strictly increasing");

  std::vector<ConfidenceBin> bins;
  for (std::size_t i = 0; i + 1 < bin_edges.size(); ++i) bins.push_back({bin_edges[i], bin_edges[i + 1], {}});
  const EmbeddingSet space = project(head, base);
  for (const auto& t : hard_triplets) {
    if (!(t.confidence > 0.5)) {
      throw ValidationError("triplet confidence must exceed 0.5");
    }
    std::size_t bin;
    if (t.confidence == bin_edges.back()) {
      bin = bins.size() - 1;
    } else {
      const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), t.confidence);
      if (it == bin_edges.begin() || it == bin_edges.end()) {
        throw ValidationError("confidence " + number(t.confidence) + " lies outside the bin edges");
      }
      bin = static_cast<std::size_t>(it - bin_edges.begin()) - 1;
    }
    ++bins[bin].count.total;
    if (triplet_correct(space, t)) ++bins[bin].count.correct;
  }
  return bins;
}

std::vector<std::string> model_order(const EmbeddingSet& space, const std::string& query,
                                     std::span<const std::string> candidates) {
  std::vector<Neighbor> scored;
  const auto& q = space.find(query).vector;
  for (const auto& c : candidates) scored.push_back({c, euclidean_distance(q, space.find(c).vector)});
  std::sort(scored.begin(), scored.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.item_id < b.item_id;
  });
  std::vector<std::string> out;
  for (auto& s : scored) out.push_back(std::move(s.item_id));
  return out;
}

PrecisionAtK precision_top_k(const ProjectionHead& head, const EmbeddingSet& base,
                             std::span<const AggregatedTask> tasks, std::span<const std::size_t> k_values) {
  for (std::size_t k : k_values)
    if (k == 0) throw ValidationError("k must be at least 1");
  const EmbeddingSet space = project(head, base);
  PrecisionAtK out;
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : k_values) hits[k] = 0;
  for (const auto& task : tasks) {
    if (task.candidates.size() < 2 || task.avg_position.size() != task.candidates.size()) {
      throw ValidationError("task '" + task.task_id + "' needs at least two candidates with positions");
    }
    const auto best = std::min_element(task.avg_position.begin(), task.avg_position.end());
    if (std::count(task.avg_position.begin(), task.avg_position.end(), *best) > 1) {
      ++out.skipped;
      continue;
    }
    const auto& top = task.candidates[static_cast<std::size_t>(best - task.avg_position.begin())];
    const auto order = model_order(space, task.query_id, task.candidates);
    const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), top) - order.begin());
    for (auto& [k, h] : hits)
      if (rank < k) ++h;
    ++out.evaluated;
  }
  if (out.evaluated == 0) {
    throw UndefinedMetricError("no task has an unambiguous top-ranked candidate");
  }
  for (const auto& [k, h] : hits) out.rate[k] = static_cast<double>(h) / static_cast<double>(out.evaluated);
  return out;
}

double ndcg(std::span<const std::string> model_order, const RelevanceProfile& relevance) {
  const std::size_t n = relevance.candidates.size();
  if (relevance.relevance.size() != n) {
    throw ValidationError("relevance profile has mismatched lengths");
  }
  std::map<std::string_view, double> rel_of;
  for (std::size_t i = 0; i < n; ++i) rel_of.emplace(relevance.candidates[i], relevance.relevance[i]);
  {
    std::vector<std::string_view> got(model_order.begin(), model_order.end());
    std::vector<std::string_view> want(relevance.candidates.begin(), relevance.candidates.end());
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    if (got != want) throw ValidationError("model order is not a permutation of the candidates");
  }
  const auto dcg = [](const std::vector<double>& rels) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rels.size(); ++i)
      sum += (std::exp2(rels[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return sum;
  };
  std::vector<double> in_model_order;
  for (const auto& c : model_order) in_model_order.push_back(rel_of.at(c));
  std::vector<double> ideal = relevance.relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double best = dcg(ideal);
  if (!(best > 0.0)) {
    throw UndefinedMetricError("NDCG is undefined when every relevance is zero");
  }
  return dcg(in_model_order) / best;
}

double mean_ndcg(const ProjectionHead& head, const EmbeddingSet& base, std::span<const AggregatedTask> tasks) {
  if (tasks.empty()) {
    throw UndefinedMetricError("mean NDCG over zero tasks");
  }
  const EmbeddingSet space = project(head, base);
  double sum = 0.0;
  for (const auto& task : tasks) {
    sum += ndcg(model_order(space, task.query_id, task.candidates), RelevanceProfile::from(task));
  }
  return sum / static_cast<double>(tasks.size());
}

WinRate top_image_winrate(std::span<const AggregatedTask> merged_tasks,
                          const std::map<std::string, std::string, std::less<>>& picks_a,
                          const std::map<std::string, std::string, std::less<>>& picks_b) {
  if (merged_tasks.empty()) {
    throw UndefinedMetricError("win rate over zero tasks");
  }
  std::size_t a_wins = 0, b_wins = 0, ties = 0;
  for (const auto& task : merged_tasks) {
    const auto pa = picks_a.find(task.task_id);
    const auto pb = picks_b.find(task.task_id);
    if (pa == picks_a.end() || pb == picks_b.end()) {
      throw ValidationError("task '" + task.task_id + "' is missing a top pick");
    }
    double pos_a, pos_b;
    try {
      pos_a = task.position_of(pa->second);
      pos_b = task.position_of(pb->second);
    } catch (const NotFoundError& e) {
      throw ValidationError(e.what());
    }
    if (pos_a < pos_b) {
      ++a_wins;
    } else if (pos_b < pos_a) {
      ++b_wins;
    } else {
      ++ties;
    }
  }
  const double n = static_cast<double>(merged_tasks.size());
  return {static_cast<double>(a_wins) / n, static_cast<double>(b_wins) / n, static_cast<double>(ties) / n};
}

double roc_auc(std::span<const ScoredPair> scores) {
  std::vector<ScoredPair> sorted(scores.begin(), scores.end());
  std::size_t positives = 0;
  for (const auto& s : sorted) {
    if (!std::isfinite(s.distance)) throw ValidationError("non-finite score in AUC input");
    if (s.same_identity) ++positives;
  }
  const std::size_t negatives = sorted.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("ROC-AUC needs both same- and different-identity pairs");
  }
  std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.distance < b.distance; });
  double favourable = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::size_t pos_group = 0, neg_group = 0;
    for (; j < sorted.size() && sorted[j].distance == sorted[i].distance; ++j)
      (sorted[j].same_identity ? pos_group : neg_group)++;
    const double neg_above = static_cast<double>(negatives - neg_below - neg_group);
    favourable += static_cast<double>(pos_group) * (neg_above + 0.5 * static_cast<double>(neg_group));
    neg_below += neg_group;
    i = j;
  }
  return favourable / (static_cast<double>(positives) * static_cast<double>(negatives));
}

std::vector<ScoredPair> identity_pair_scores(const EmbeddingSet& space) {
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; i < space.size(); ++i)
    for (std::size_t j = i + 1; j < space.size(); ++j)
      out.push_back({euclidean_distance(space[i].vector, space[j].vector), space[i].identity == space[j].identity});
  return out;
}

double attribute_hamming_analysis(const std::map<std::string, std::vector<std::uint8_t>, std::less<>>& attributes,
                                  std::span<const RetrievalList> retrieval_lists) {
  if (retrieval_lists.empty()) {
    throw ValidationError("attribute analysis needs at least one retrieval list");
  }
  const auto lookup = [&](const std::string& id) -> const std::vector<std::uint8_t>& {
    const auto it = attributes.find(id);
    if (it == attributes.end()) throw ValidationError("no attribute vector for '" + id + "'");
    return it->second;
  };
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& list : retrieval_lists) {
    if (list.retrieved.empty()) {
      throw ValidationError("retrieval list for '" + list.query + "' is empty");
    }
    const auto& q = lookup(list.query);
    if (q.empty()) throw ValidationError("attribute vector for '" + list.query + "' is empty");
    for (const auto& r : list.retrieved) {
      const auto& v = lookup(r);
      if (v.size() != q.size()) {
        throw ValidationError("attribute vectors of '" + list.query + "' and '" + r + "' differ in length");
      }
      std::size_t differing = 0;
      for (std::size_t i = 0; i < q.size(); ++i)
        if ((q[i] != 0) != (v[i] != 0)) ++differing;
      sum += static_cast<double>(differing) / static_cast<double>(q.size());
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

EvalReport evaluate(const ProjectionHead& head, const EmbeddingSet& base, std::span<const Triplet> hard_triplets,
                    std::span<const Triplet> easy_triplets, std::span<const AggregatedTask> tasks) {
  EvalReport report;
  std::vector<Triplet> all(hard_triplets.begin(), hard_triplets.end());
  all.insert(all.end(), easy_triplets.begin(), easy_triplets.end());
  const TripletAccuracy acc = triplet_accuracy(head, base, all);
  report.hard_accuracy = acc.hard.rate();
  report.easy_accuracy = acc.easy.rate();
  report.hard_count = acc.hard.total;
  report.easy_count = acc.easy.total;
  if (acc.hard.total > 0 && acc.easy.total > 0) {
    report.total = (report.hard_accuracy + report.easy_accuracy) / 2.0;
  } else {
    report.total = acc.hard.total > 0 ? report.hard_accuracy : report.easy_accuracy;
  }
  report.per_confidence_bin = accuracy_by_confidence(head, base, hard_triplets);
  if (!tasks.empty()) {
    std::vector<std::size_t> ks(kDefaultTopK);
    std::iota(ks.begin(), ks.end(), std::size_t{1});
    report.precision_at_k = precision_top_k(head, base, tasks, ks);
    report.mean_ndcg = mean_ndcg(head, base, tasks);
    report.ndcg_tasks = tasks.size();
  }
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.per_confidence_bin) {
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"accuracy", b.count.rate()}, {"count", b.count.total}});
  }
  nlohmann::json pk = nlohmann::json::object();
  for (const auto& [k, r] : report.precision_at_k.rate) pk[std::to_string(k)] = r;
  return {{"hard_accuracy", report.hard_accuracy},
          {"easy_accuracy", report.easy_accuracy},
          {"total", report.total},
          {"hard_count", report.hard_count},
          {"easy_count", report.easy_count},
          {"per_confidence_bin", bins},
          {"precision_at_k", pk},
          {"precision_evaluated", report.precision_at_k.evaluated},
          {"precision_skipped", report.precision_at_k.skipped},
          {"mean_ndcg", report.mean_ndcg},
          {"ndcg_tasks", report.ndcg_tasks}};
}

void write_report_tables(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_csv(dir / "triplet_accuracy.csv");
    out << "hard,easy,total\n"
        << number(report.hard_accuracy) << ',' << number(report.easy_accuracy) << ',' << number(report.total) << '\n';
  }
  {
    auto out = open_csv(dir / "confidence_bins.csv");
    out << "range,accuracy,count\n";
    for (const auto& b : report.per_confidence_bin)
      out << number(b.lower) << '-' << number(b.upper) << ',' << number(b.count.rate()) << ',' << b.count.total
          << '\n';
  }
  {
    auto out = open_csv(dir / "precision_at_k.csv");
    out << "k,rate\n";
    for (const auto& [k, r] : report.precision_at_k.rate) out << k << ',' << number(r) << '\n';
  }
}

}  // namespace lookalike
