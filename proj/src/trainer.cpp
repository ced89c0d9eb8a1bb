#include "lookalike/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>

#include "lookalike/errors.hpp"
#include "lookalike/jsonl.hpp"
#include "lookalike/rng.hpp"

namespace lookalike {

namespace {

constexpr double kNormSmoothing = 1e-12;
constexpr int kHeadFormatVersion = 1;

void check_input(const ProjectionHead& head, std::span<const double> x) {
  if (x.size() != head.d_in) {
    throw DimensionError("head expects input of dimension " + std::to_string(head.d_in) + ", got " +
                         std::to_string(x.size()));
  }
}

// Pre-normalization output W x + b.
std::vector<double> affine(const ProjectionHead& head, std::span<const double> x) {
  check_input(head, x);
  std::vector<double> z(head.bias);
  for (std::size_t r = 0; r < head.d_out; ++r) {
    const double* row = head.weights.data() + r * head.d_in;
    double acc = 0.0;
    for (std::size_t c = 0; c < head.d_in; ++c) acc += row[c] * x[c];
    z[r] += acc;
  }
  return z;
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Output of one triplet member plus what backprop needs.
struct Activation {
  std::vector<double> out;  // y
  double pre_norm = 1.0;    // ‖z‖ when normalizing
};

Activation activate(const ProjectionHead& head, std::span<const double> x) {
  Activation act{affine(head, x), 1.0};
  if (head.normalize_output) act.pre_norm = normalize_in_place(act.out);
  return act;
}

// Pulls dL/dy back to dL/dz and accumulates into the parameter gradient.
void backprop(const ProjectionHead& head, const Activation& act, std::span<const double> x, std::vector<double> g,
              HeadGradient& grad) {
  if (head.normalize_output) {
    if (act.pre_norm == 0.0) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += act.out[i] * g[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (g[i] - act.out[i] * dot) / act.pre_norm;
  }
  for (std::size_t r = 0; r < head.d_out; ++r) {
    double* row = grad.weights.data() + r * head.d_in;
    for (std::size_t c = 0; c < head.d_in; ++c) row[c] += g[r] * x[c];
    grad.bias[r] += g[r];
  }
}

std::size_t resolve(const EmbeddingSet& base, const std::string& id, const char* role) {
  const auto idx = base.index_of(id);
  if (!idx) {
    throw ValidationError(std::string(role) + " '" + id + "' is not in the base embedding set");
  }
  return *idx;
}

}  // namespace

ProjectionHead ProjectionHead::identity(std::size_t d_in, std::size_t d_out, bool normalize_output) {
  if (d_in == 0 || d_out == 0) {
    throw ValidationError("head dimensions must be positive");
  }
  ProjectionHead head{d_in, d_out, std::vector<double>(d_out * d_in, 0.0), std::vector<double>(d_out, 0.0),
                      normalize_output};
  for (std::size_t i = 0; i < std::min(d_in, d_out); ++i) head.weights[i * d_in + i] = 1.0;
  return head;
}

ProjectionHead ProjectionHead::near_identity(std::size_t d_in, std::size_t d_out, bool normalize_output,
                                             double noise, std::uint64_t seed) {
  ProjectionHead head = identity(d_in, d_out, normalize_output);
  if (noise > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, noise);
    for (double& w : head.weights) w += gauss(rng);
  }
  return head;
}

HeadGradient HeadGradient::zeros_like(const ProjectionHead& head) {
  return {std::vector<double>(head.weights.size(), 0.0), std::vector<double>(head.bias.size(), 0.0)};
}

HeadGradient& HeadGradient::operator+=(const HeadGradient& other) {
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += other.weights[i];
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += other.bias[i];
  return *this;
}

HeadGradient& HeadGradient::operator*=(double scale) {
  for (double& w : weights) w *= scale;
  for (double& b : bias) b *= scale;
  return *this;
}

void TrainConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be positive");
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  if (!(easy_prob >= 0.0 && easy_prob <= 1.0)) throw ValidationError("easy_prob must lie in [0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("adam beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("adam beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ValidationError("adam epsilon must be positive");
  if (!(init_noise >= 0.0) || !std::isfinite(init_noise)) throw ValidationError("init noise must be non-negative");
}

AdamOptimizer::AdamOptimizer(const ProjectionHead& head, double learning_rate, double beta1, double beta2,
                             double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(HeadGradient::zeros_like(head)),
      v_(HeadGradient::zeros_like(head)) {}

void AdamOptimizer::step(ProjectionHead& head, const HeadGradient& grad) {
  ++t_;
  const double correct1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correct2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto update = [&](std::vector<double>& param, const std::vector<double>& g, std::vector<double>& m,
                          std::vector<double>& v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      param[i] -= lr_ * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + eps_);
    }
  };
  update(head.weights, grad.weights, m_.weights, v_.weights);
  update(head.bias, grad.bias, m_.bias, v_.bias);
}

std::vector<double> forward(const ProjectionHead& head, std::span<const double> x) {
  return activate(head, x).out;
}

EmbeddingSet project(const ProjectionHead& head, const EmbeddingSet& set) {
  if (head.d_in != set.dim()) {
    throw DimensionError("head input dimension " + std::to_string(head.d_in) + " does not match embedding dimension " +
                         std::to_string(set.dim()));
  }
  std::vector<EmbeddingRecord> out;
  out.reserve(set.size());
  for (const auto& rec : set.records()) out.push_back({rec.item_id, rec.identity, forward(head, rec.vector)});
  return EmbeddingSet(head.d_out, std::move(out), /*normalize=*/false);
}

double triplet_loss(std::span<const double> f_a, std::span<const double> f_p, std::span<const double> f_n,
                    double alpha) {
  if (!all_finite(f_a) || !all_finite(f_p) || !all_finite(f_n) || !std::isfinite(alpha)) {
    throw NumericError("non-finite input to triplet loss");
  }
  if (!(alpha > 0.0)) {
    throw ValidationError("margin alpha must be positive");
  }
  const double slack = euclidean_distance(f_a, f_p) - euclidean_distance(f_a, f_n) + alpha;
  return std::max(0.0, slack);
}

LossAndGradient triplet_loss_gradient(const ProjectionHead& head, std::span<const double> raw_a,
                                      std::span<const double> raw_p, std::span<const double> raw_n, double alpha) {
  const Activation a = activate(head, raw_a);
  const Activation p = activate(head, raw_p);
  const Activation n = activate(head, raw_n);
  LossAndGradient result{triplet_loss(a.out, p.out, n.out, alpha), HeadGradient::zeros_like(head)};
  if (result.loss <= 0.0) return result;

  const std::size_t d = head.d_out;
  std::vector<double> u(d), v(d);
  for (std::size_t i = 0; i < d; ++i) {
    u[i] = a.out[i] - p.out[i];
    v[i] = a.out[i] - n.out[i];
  }
  const double nu = std::sqrt(squared_norm(u) + kNormSmoothing);
  const double nv = std::sqrt(squared_norm(v) + kNormSmoothing);
  std::vector<double> ga(d), gp(d), gn(d);
  for (std::size_t i = 0; i < d; ++i) {
    ga[i] = u[i] / nu - v[i] / nv;
    gp[i] = -u[i] / nu;
    gn[i] = v[i] / nv;
  }
  backprop(head, a, raw_a, std::move(ga), result.gradient);
  backprop(head, p, raw_p, std::move(gp), result.gradient);
  backprop(head, n, raw_n, std::move(gn), result.gradient);
  return result;
}

TrainResult train(const EmbeddingSet& base, std::span<const Triplet> hard_triplets, std::span<const RankingTask> tasks,
                  const TrainConfig& config) {
  config.validate();
  if (hard_triplets.empty()) {
    throw ValidationError("training needs at least one hard triplet");
  }
  using Indices = std::array<std::size_t, 3>;
  std::vector<Indices> hard;
  hard.reserve(hard_triplets.size());
  for (const auto& t : hard_triplets) {
    hard.push_back({resolve(base, t.anchor, "anchor"), resolve(base, t.positive, "positive"),
                    resolve(base, t.negative, "negative")});
  }
  std::optional<EasyTripletSampler> easy;
  if (config.easy_prob > 0.0) {
    if (tasks.empty()) {
      throw ValidationError("easy triplet sampling needs at least one ranking task");
    }
    for (const auto& task : tasks) {
      resolve(base, task.query_id, "query");
      for (const auto& c : task.candidates) resolve(base, c, "candidate");
    }
    easy.emplace(base, tasks);
  }

  const std::size_t d_out = config.d_out == 0 ? base.dim() : config.d_out;
  TrainResult result{ProjectionHead::near_identity(base.dim(), d_out, config.normalize_output, config.init_noise,
                                                   derive_seed(config.seed, "init")),
                     {}};
  ProjectionHead& head = result.head;
  AdamOptimizer adam(head, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  Rng rng(derive_seed(config.seed, "batches"));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::size_t batches = (hard.size() + config.batch_size - 1) / config.batch_size;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      HeadGradient grad = HeadGradient::zeros_like(head);
      for (std::size_t slot = 0; slot < config.batch_size; ++slot) {
        Indices idx;
        if (easy && coin(rng) < config.easy_prob) {
          const Triplet t = easy->sample(uniform_index(rng, easy->task_count()), rng);
          idx = {base.require_index(t.anchor), base.require_index(t.positive), base.require_index(t.negative)};
        } else {
          idx = hard[uniform_index(rng, hard.size())];
        }
        auto lg = triplet_loss_gradient(head, base[idx[0]].vector, base[idx[1]].vector, base[idx[2]].vector,
                                        config.alpha);
        epoch_sum += lg.loss;
        grad += lg.gradient;
      }
      grad *= 1.0 / static_cast<double>(config.batch_size);
      adam.step(head, grad);
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(batches * config.batch_size));
  }
  if (!all_finite(head.weights) || !all_finite(head.bias)) {
    throw NumericError("training diverged to non-finite parameters");
  }
  return result;
}

nlohmann::json head_to_json(const ProjectionHead& head) {
  return {{"format", "lookalike-projection-head"},
          {"version", kHeadFormatVersion},
          {"d_in", head.d_in},
          {"d_out", head.d_out},
          {"normalize_output", head.normalize_output},
          {"weights", head.weights},
          {"bias", head.bias}};
}

ProjectionHead head_from_json(const nlohmann::json& j) {
  ProjectionHead head;
  try {
    if (j.at("format").get<std::string>() != "lookalike-projection-head") {
      throw ValidationError("not a projection head file");
    }
    if (j.at("version").get<int>() != kHeadFormatVersion) {
      throw ValidationError("unsupported head format version " + j.at("version").dump());
    }
    head.d_in = j.at("d_in").get<std::size_t>();
    head.d_out = j.at("d_out").get<std::size_t>();
    head.normalize_output = j.at("normalize_output").get<bool>();
    head.weights = j.at("weights").get<std::vector<double>>();
    head.bias = j.at("bias").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed head: ") + e.what());
  }
  if (head.d_in == 0 || head.d_out == 0 || head.weights.size() != head.d_in * head.d_out ||
      head.bias.size() != head.d_out) {
    throw ValidationError("head parameter shapes do not match its dimensions");
  }
  if (!all_finite(head.weights) || !all_finite(head.bias)) {
    throw ValidationError("head contains non-finite parameters");
  }
  return head;
}

void save_head(const ProjectionHead& head, const std::filesystem::path& path) {
  write_json_file(path, head_to_json(head));
}

ProjectionHead load_head(const std::filesystem::path& path) { return head_from_json(read_json_file(path)); }

void write_loss_curve_csv(std::span<const double> epoch_loss, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ValidationError("cannot open '" + path.string() + "' for writing");
  }
  out << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) out << (e + 1) << ',' << nlohmann::json(epoch_loss[e]).dump() << '\n';
}

}  // namespace lookalike
