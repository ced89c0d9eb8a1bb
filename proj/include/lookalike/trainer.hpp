#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/task_builder.hpp"

namespace lookalike {

/// Trainable affine map from base-embedding space to similarity space,
/// optionally followed by L2 normalization of the output.
struct ProjectionHead {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<double> weights;  // row-major, d_out x d_in
  std::vector<double> bias;     // d_out
  bool normalize_output = true;

  double weight(std::size_t row, std::size_t col) const { return weights[row * d_in + col]; }

  /// W = I (truncated when d_out < d_in), b = 0.
  static ProjectionHead identity(std::size_t d_in, std::size_t d_out, bool normalize_output);

  /// Identity plus i.i.d. Gaussian noise of standard deviation `noise` on every weight.
  static ProjectionHead near_identity(std::size_t d_in, std::size_t d_out, bool normalize_output, double noise,
                                     std::uint64_t seed);

  friend bool operator==(const ProjectionHead&, const ProjectionHead&) = default;
};

/// Gradient of a scalar loss with respect to every parameter of a head.
struct HeadGradient {
  std::vector<double> weights;
  std::vector<double> bias;

  static HeadGradient zeros_like(const ProjectionHead& head);
  HeadGradient& operator+=(const HeadGradient& other);
  HeadGradient& operator*=(double scale);
};

struct TrainConfig {
  double alpha = 0.05;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  double easy_prob = 0.5;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t d_out = 0;  // 0 selects d_in
  bool normalize_output = true;
  double init_noise = 1e-3;

  /// Throws ValidationError when a field is out of range.
  void validate() const;
};

/// Adam moment estimates shaped like the head's parameters.
class AdamOptimizer {
 public:
  AdamOptimizer(const ProjectionHead& head, double learning_rate, double beta1, double beta2, double epsilon);

  /// Applies one bias-corrected Adam update and increments the step counter.
  void step(ProjectionHead& head, const HeadGradient& grad);

  std::uint64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  HeadGradient m_;
  HeadGradient v_;
};

/// W x + b, then unit-normalized when `head.normalize_output` (an exactly zero output stays zero).
std::vector<double> forward(const ProjectionHead& head, std::span<const double> x);

/// The whole set mapped through the head. Item ids and identities are preserved.
EmbeddingSet project(const ProjectionHead& head, const EmbeddingSet& set);

/// max(0, ‖f_a − f_p‖ − ‖f_a − f_n‖ + alpha).
double triplet_loss(std::span<const double> f_a, std::span<const double> f_p, std::span<const double> f_n,
                    double alpha);

struct LossAndGradient {
  double loss = 0.0;
  HeadGradient gradient;
};

/// Loss of one raw-space triplet pushed through the head, with its analytic subgradient.
/// The gradient is zero when the hinge is inactive (slack ≤ 0). Norms inside the
/// gradient use sqrt(‖u‖² + 1e-12) so coincident outputs never divide by zero.
LossAndGradient triplet_loss_gradient(const ProjectionHead& head, std::span<const double> raw_a,
                                      std::span<const double> raw_p, std::span<const double> raw_n, double alpha);

struct TrainResult {
  ProjectionHead head;
  std::vector<double> epoch_loss;  // mean per-slot loss of every epoch
};

/// Fits a projection head with minibatch Adam.
///
/// Each batch slot is an easy triplet (from a uniformly chosen task) with
/// probability `easy_prob`, otherwise a uniformly drawn hard triplet. One
/// epoch is ceil(|hard| / batch_size) batches. Fully deterministic under `config.seed`.
TrainResult train(const EmbeddingSet& base, std::span<const Triplet> hard_triplets, std::span<const RankingTask> tasks,
                  const TrainConfig& config);

nlohmann::json head_to_json(const ProjectionHead& head);
ProjectionHead head_from_json(const nlohmann::json& j);
void save_head(const ProjectionHead& head, const std::filesystem::path& path);
ProjectionHead load_head(const std::filesystem::path& path);

/// CSV with header `epoch,mean_loss`, epochs numbered from 1.
void write_loss_curve_csv(std::span<const double> epoch_loss, const std::filesystem::path& path);

}  // namespace lookalike
