#include "fhgs/trainer.hpp"

#include "fhgs/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fhgs {

void TrainConfig::validate() const {
  if (iters < 0) throw InvalidParameter("iters must be non-negative");
  activation.validate();
  for (double r : {lr.position_init, lr.position_final, lr.rotation, lr.scale, lr.opacity, lr.color})
    if (!(r > 0)) throw InvalidParameter("learning rates must be positive");
  if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw InvalidParameter("loss weights must be non-negative");
  if (densify.enabled) {
    if (densify.interval <= 0) throw InvalidParameter("densify interval must be positive");
    if (densify.start < 0) throw InvalidParameter("densify start must be non-negative");
    // The derived window may be empty on short runs; an explicit one must be valid.
    if (densify.stop >= 0 && !(densify.start < densify.stop && densify.stop <= iters))
      throw InvalidParameter("densify window must satisfy start < stop <= iters");
  }
  if (eval_interval < 0) throw InvalidParameter("eval interval must be non-negative");
}

ObjectiveOptions TrainConfig::objective() const {
  ObjectiveOptions o;
  o.raster.traversal = traversal;
  o.raster.background = background;
  o.raster.threads = threads;
  o.ndfd.activation = activation;
  o.ndfd.invert_cf_polarity = invert_cf_polarity;
  o.photometric = photometric;
  o.weights = {1.0, lambda1, lambda2};
  return o;
}

double camera_extent(const std::vector<Camera>& cameras) {
  if (cameras.empty()) return 1.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& c : cameras) mean += c.center();
  mean /= static_cast<double>(cameras.size());
  double radius = 0;
  for (const auto& c : cameras) radius = std::max(radius, (c.center() - mean).norm());
  return radius > 0 ? 1.1 * radius : 1.0;
}

void OptimizerState::resize(std::size_t n) {
  m.assign(n, {});
  v.assign(n, {});
}

std::array<double, 5> learning_rates(const LearningRates& lr, double extent, int iter, int iters) {
  const double t = iters > 0 ? std::clamp(double(iter) / iters, 0.0, 1.0) : 0.0;
  const double pos = std::exp((1 - t) * std::log(lr.position_init) + t * std::log(lr.position_final));
  return {pos * extent, lr.rotation, lr.scale, lr.opacity, lr.color};
}

void adam_step(Scene<float>& scene, const GradBuffer<float>& grads, OptimizerState& state,
               const std::array<double, 5>& group_rates) {
  if (grads.size() != scene.size() || state.size() != scene.size())
    throw UsageError("adam_step: gradient, optimizer and scene sizes differ");
  ++state.step;
  const double bc1 = 1 - std::pow(kAdamBeta1, double(state.step));
  const double bc2 = 1 - std::pow(kAdamBeta2, double(state.step));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    Primitive<float>& prim = scene.primitives[i];
    bool rotated = false;
    for (int k = 0; k < kNumParams; ++k) {
      const double g = grads.get(i, k);
      float& m = state.m[i][k];
      float& v = state.v[i][k];
      m = static_cast<float>(kAdamBeta1 * m + (1 - kAdamBeta1) * g);
      v = static_cast<float>(kAdamBeta2 * v + (1 - kAdamBeta2) * g * g);
      if (m == 0.0f) continue;
      const double lr = group_rates[static_cast<std::size_t>(param_group(k))];
      const double step = lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEpsilon);
      prim.param(k) = static_cast<float>(prim.param(k) - step);
      if (param_group(k) == ParamGroup::rotation) rotated = true;
    }
    if (rotated) {
      const float n = prim.rotation.norm();
      if (n > 0) prim.rotation /= n;
    }
    for (int c = 0; c < 3; ++c) prim.color[c] = std::clamp(prim.color[c], 0.0f, 1.0f);
  }
}

DensifyStats densify_and_prune(Scene<float>& scene, OptimizerState& state,
                               std::vector<double>& grad_accum, std::vector<std::uint32_t>& grad_count,
                               const DensifyConfig& config, double extent, std::mt19937_64& rng) {
  const std::size_t n = scene.size();
  if (grad_accum.size() != n || grad_count.size() != n || state.size() != n)
    throw UsageError("densify_and_prune: accumulator sizes differ from the scene");
  DensifyStats stats;
  std::normal_distribution<double> normal;
  const float shrink = static_cast<float>(std::log(config.split_scale_divisor));

  std::vector<Primitive<float>> next;
  std::vector<std::array<float, kNumParams>> next_m, next_v;
  next.reserve(n);
  auto keep = [&](Primitive<float> p, const std::array<float, kNumParams>& m,
                  const std::array<float, kNumParams>& v) {
    next.push_back(std::move(p));
    next_m.push_back(m);
    next_v.push_back(v);
  };
  std::vector<Primitive<float>> children;
  std::size_t budget = config.max_primitives == 0 ? SIZE_MAX
                       : config.max_primitives > n ? config.max_primitives - n
                                                   : 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Primitive<float>& p = scene.primitives[i];
    const double mean = grad_count[i] > 0 ? grad_accum[i] / grad_count[i] : 0.0;
    if (!(mean > config.grad_threshold) || budget == 0) {
      keep(p, state.m[i], state.v[i]);
      continue;
    }
    const Vec2<float> s = p.scale();
    if (s.maxCoeff() <= config.clone_fraction * extent) {
      keep(p, state.m[i], state.v[i]);
      children.push_back(p);
      ++stats.cloned;
      --budget;
      continue;
    }
    // Split: two children at offsets drawn in the tangent plane, scales shrunk.
    const TangentFrame<float> frame = decode_frame(p.rotation);
    for (int c = 0; c < 2; ++c) {
      Primitive<float> child = p;
      child.position += frame.tu * static_cast<float>(normal(rng) * s[0]) +
                        frame.tv * static_cast<float>(normal(rng) * s[1]);
      child.log_scale.array() -= shrink;
      children.push_back(std::move(child));
    }
    ++stats.split;
    --budget;
  }
  for (auto& c : children) keep(std::move(c), {}, {});

  scene.primitives.clear();
  state.m.clear();
  state.v.clear();
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (next[i].opacity() < config.prune_opacity) {
      ++stats.pruned;
      continue;
    }
    scene.primitives.push_back(std::move(next[i]));
    state.m.push_back(next_m[i]);
    state.v.push_back(next_v[i]);
  }
  if (scene.empty()) throw NumericalError("densify_and_prune: every primitive was pruned");
  grad_accum.assign(scene.size(), 0.0);
  grad_count.assign(scene.size(), 0);
  return stats;
}

LossBundle total_loss(double l_rgb, double l_gt, double l_cf, const TrainConfig& config) {
  const LossBundle b = mix_losses(l_rgb, l_gt, l_cf, config.lambda1, config.lambda2);
  if (!b.finite()) {
    std::ostringstream os;
    os << "non-finite loss: l_rgb=" << l_rgb << " l_gt=" << l_gt << " l_cf=" << l_cf;
    throw NumericalError(os.str());
  }
  return b;
}

std::string metric_log_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << kMetricLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << r.l_rgb << ',' << r.l_gt << ',' << r.l_cf << ',' << r.total << ',' << r.psnr
       << ',' << r.fe << ',';
    if (r.fl1) os << *r.fl1;
    os << ',' << r.n_primitives << ',' << r.elapsed_s << '\n';
  }
  return os.str();
}

void write_metric_log(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open file for writing");
  out << metric_log_csv(rows);
  if (!out) throw LoadError(path.string() + ": write failed");
}

namespace {

double dataset_fl1(const Scene<float>& scene, const SceneInit& data, const ObjectiveOptions& objective,
                   bool normalize) {
  RenderTargets<float> targets;
  targets.color = false;
  targets.feature = true;
  double sum = 0;
  for (std::size_t v = 0; v < data.view_count(); ++v) {
    const auto out = render_view(scene, data.cameras[v], objective.raster, targets);
    sum += fl1(out.feature, data.features[v], normalize);
  }
  return data.view_count() ? sum / static_cast<double>(data.view_count()) : 0.0;
}

}  // namespace

TrainResult train(const Scene<float>& init, const SceneInit& data, const TrainConfig& config,
                  const ProgressFn& progress) {
  config.validate();
  if (data.view_count() == 0) throw UsageError("train: dataset has no views");
  if (!init.empty() && init.feature_dim != data.feature_dim())
    throw UsageError("train: scene and dataset feature dimensions differ");
  const auto start = std::chrono::steady_clock::now();
  const ObjectiveOptions objective = config.objective();
  const double extent = config.extent > 0 ? config.extent : camera_extent(data.cameras);

  TrainResult result;
  result.scene = init;
  Scene<float>& scene = result.scene;
  OptimizerState state(scene.size());
  std::vector<double> grad_accum(scene.size(), 0.0);
  std::vector<std::uint32_t> grad_count(scene.size(), 0);
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 densify_rng(config.seed ^ 0xd1b54a32d192ed03ull);

  std::vector<std::size_t> order(data.view_count());
  std::size_t cursor = order.size();
  ViewGradients<float> vg;
  Image<float> color;
  const int stop = config.densify_stop();

  for (int iter = 0; iter < config.iters; ++iter) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t view = order[cursor++];
    const ViewLoss loss = evaluate_view(scene, data.cameras[view], data.images[view], data.features[view],
                                        objective, &vg, &color);

    MetricRow row;
    row.iter = iter;
    row.l_rgb = loss.bundle.l_rgb;
    row.l_gt = loss.bundle.l_gt;
    row.l_cf = loss.bundle.l_cf;
    row.total = loss.bundle.total;
    row.psnr = psnr(color, data.images[view]);
    row.fe = loss.bundle.l_gt;
    row.n_primitives = scene.size();
    const bool eval_now = iter == 0 || iter == config.iters - 1 ||
                          (config.eval_interval > 0 && iter % config.eval_interval == 0);
    if (eval_now) row.fl1 = dataset_fl1(scene, data, objective, config.fl1_normalize);
    row.elapsed_s = config.deterministic
                        ? 0.0
                        : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    try {
      total_loss(row.l_rgb, row.l_gt, row.l_cf, config);
      if (!vg.grads.all_finite()) throw NumericalError("non-finite gradient at iteration " + std::to_string(iter));
    } catch (const NumericalError& e) {
      result.log.push_back(row);
      result.aborted = true;
      result.abort_reason = e.what();
      return result;
    }
    result.log.push_back(row);
    if (progress) progress(row);

    adam_step(scene, vg.grads, state, learning_rates(config.lr, extent, iter, config.iters));
    result.iterations = iter + 1;

    if (config.densify.enabled && iter < stop) {
      for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!vg.visible[i]) continue;
        grad_accum[i] += vg.screen_grad[i];
        ++grad_count[i];
      }
      if (iter >= config.densify.start && iter > 0 && iter % config.densify.interval == 0) {
        const DensifyStats ds =
            densify_and_prune(scene, state, grad_accum, grad_count, config.densify, extent, densify_rng);
        result.densified.cloned += ds.cloned;
        result.densified.split += ds.split;
        result.densified.pruned += ds.pruned;
      }
    }
  }
  return result;
}

}  // namespace fhgs
