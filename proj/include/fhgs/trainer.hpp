#pragma once

#include "fhgs/backward.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fhgs {

/// Adam step sizes. Position rates are multiplied by the scene extent and
/// decay exponentially from `position_init` to `position_final` over the run.
struct LearningRates {
  double position_init = 1.6e-4;
  double position_final = 1.6e-6;
  double rotation = 1e-3;
  double scale = 5e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
};

struct DensifyConfig {
  bool enabled = true;
  int interval = 100;
  int start = 500;
  /// Negative: 3/4 of the iteration count.
  int stop = -1;
  /// Threshold on the mean screen-space positional gradient norm.
  double grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  /// Splats whose larger scale is at most this fraction of the extent are cloned, others split.
  double clone_fraction = 0.01;
  double split_scale_divisor = 1.6;
  /// 0 = unlimited.
  std::size_t max_primitives = 0;
};

struct TrainConfig {
  int iters = 10000;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  SimilarityActivation activation;
  bool invert_cf_polarity = false;
  Traversal traversal = Traversal::standard;
  PhotometricOptions photometric;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  LearningRates lr;
  DensifyConfig densify;
  std::uint64_t seed = 0;
  /// Writes 0 into the elapsed-time column so logs are reproducible byte for byte.
  bool deterministic = false;
  /// FL1 over all views is logged every this many iterations (0 = first and last only).
  int eval_interval = 500;
  bool fl1_normalize = false;
  int threads = 0;
  /// Scene extent for position rates and clone/split; <= 0 derives it from the cameras.
  double extent = 0;

  void validate() const;
  int densify_stop() const { return densify.stop < 0 ? (iters * 3) / 4 : densify.stop; }
  ObjectiveOptions objective() const;
};

/// 1.1 times the largest distance of a camera center from the centers' mean.
double camera_extent(const std::vector<Camera>& cameras);

struct OptimizerState {
  std::vector<std::array<float, kNumParams>> m;
  std::vector<std::array<float, kNumParams>> v;
  std::int64_t step = 0;

  explicit OptimizerState(std::size_t n = 0) { resize(n); }
  void resize(std::size_t n);
  std::size_t size() const { return m.size(); }
};

/// Per-group learning rates at iteration `iter` of `iters`.
std::array<double, 5> learning_rates(const LearningRates& lr, double extent, int iter, int iters);

/// One Adam step (beta1 0.9, beta2 0.999, eps 1e-15) over all primitives.
/// Quaternions that moved are renormalized, colors are clamped to [0, 1] and
/// features are never touched.
void adam_step(Scene<float>& scene, const GradBuffer<float>& grads, OptimizerState& state,
               const std::array<double, 5>& group_rates);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-15;

struct DensifyStats {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

/// Clones or splits every primitive whose accumulated mean screen gradient
/// exceeds the threshold, then prunes primitives below the opacity floor.
/// Children copy the parent's feature and start with zero Adam moments; the
/// accumulators are resized to the new set and cleared. Throws
/// NumericalError if nothing survives.
DensifyStats densify_and_prune(Scene<float>& scene, OptimizerState& state,
                               std::vector<double>& grad_accum, std::vector<std::uint32_t>& grad_count,
                               const DensifyConfig& config, double extent, std::mt19937_64& rng);

/// Loss mix of one view's components (total = l_rgb + lambda1 l_gt + lambda2 l_cf).
/// Throws NumericalError naming the offending term if any component is non-finite.
LossBundle total_loss(double l_rgb, double l_gt, double l_cf, const TrainConfig& config);

struct MetricRow {
  int iter = 0;
  double l_rgb = 0;
  double l_gt = 0;
  double l_cf = 0;
  double total = 0;
  /// Of the sampled training view.
  double psnr = 0;
  /// Per-pixel mean L_gt of the sampled training view.
  double fe = 0;
  /// Over all views; only on evaluation iterations.
  std::optional<double> fl1;
  std::size_t n_primitives = 0;
  double elapsed_s = 0;
};

inline constexpr const char* kMetricLogHeader =
    "iter,l_rgb,l_gt,l_cf,total,psnr,fe,fl1,n_primitives,elapsed_s";

std::string metric_log_csv(const std::vector<MetricRow>& rows);
void write_metric_log(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct TrainResult {
  Scene<float> scene;
  std::vector<MetricRow> log;
  int iterations = 0;
  DensifyStats densified;
  bool aborted = false;
  std::string abort_reason;
};

using ProgressFn = std::function<void(const MetricRow&)>;

/// Runs the optimization loop. On a non-finite loss or gradient the step is
/// not applied and the result carries the last good scene with aborted set.
TrainResult train(const Scene<float>& init, const SceneInit& data, const TrainConfig& config,
                  const ProgressFn& progress = {});

}  // namespace fhgs
