#include "fhgs/backward.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace fhgs {

template <typename Real>
void GradBuffer<Real>::resize(std::size_t n) {
  position.assign(n, Vec3<Real>::Zero());
  rotation.assign(n, Vec4<Real>::Zero());
  log_scale.assign(n, Vec2<Real>::Zero());
  opacity_logit.assign(n, Real(0));
  color.assign(n, Vec3<Real>::Zero());
}

template <typename Real>
void GradBuffer<Real>::zero() {
  resize(size());
}

template <typename Real>
Real GradBuffer<Real>::get(std::size_t prim, int param) const {
  if (param < 3) return position[prim][param];
  if (param < 7) return rotation[prim][param - 3];
  if (param < 9) return log_scale[prim][param - 7];
  if (param == 9) return opacity_logit[prim];
  return color[prim][param - 10];
}

template <typename Real>
bool GradBuffer<Real>::all_finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!position[i].allFinite() || !rotation[i].allFinite() || !log_scale[i].allFinite() ||
        !std::isfinite(opacity_logit[i]) || !color[i].allFinite())
      return false;
  }
  return true;
}

template <typename Real>
SplatGradient<Real>& SplatGradient<Real>::operator+=(const SplatGradient& o) {
  center += o.center;
  tu += o.tu;
  tv += o.tv;
  tw += o.tw;
  log_scale += o.log_scale;
  opacity_logit += o.opacity_logit;
  color += o.color;
  return *this;
}

template <typename Real>
void grad_w_lcf(std::span<const WeightedFeature<Real>> far_to_near,
                const AccumulatorState<Real>& terminal, std::span<Real> out) {
  const std::size_t n = far_to_near.size();
  const std::size_t d = terminal.F_cum.size();
  // Suffix sums over fragments after k (nearer, in accumulation order).
  Real suffix_w = 0, suffix_sw = 0;
  std::vector<Real> suffix_wf(d, Real(0)), suffix_swf(d, Real(0));
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t k = n - 1 - q;
    const WeightedFeature<Real>& fk = far_to_near[k];
    // W_{k-1} and F_{k-1} recovered from the recorded totals.
    const Real w_before = terminal.W_cum - suffix_w - fk.w;
    Real f_before_dot = 0, after_dot = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const Real f_before = terminal.F_cum[c] - suffix_wf[c] - fk.w * fk.feature[c];
      f_before_dot += f_before * fk.feature[c];
      after_dot += suffix_swf[c] * fk.feature[c];
    }
    out[k] = fk.sigma * (w_before - f_before_dot) + (suffix_sw - after_dot);
    suffix_w += fk.w;
    suffix_sw += fk.sigma * fk.w;
    for (std::size_t c = 0; c < d; ++c) {
      suffix_wf[c] += fk.w * fk.feature[c];
      suffix_swf[c] += fk.sigma * fk.w * fk.feature[c];
    }
  }
}

template <typename Real>
void grad_w_lcf_naive(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim,
                      std::span<Real> out) {
  const std::size_t n = far_to_near.size();
  auto dot = [&](const WeightedFeature<Real>& a, const WeightedFeature<Real>& b) {
    Real s = 0;
    for (int c = 0; c < feature_dim; ++c) s += a.feature[c] * b.feature[c];
    return s;
  };
  for (std::size_t k = 0; k < n; ++k) {
    const auto& fk = far_to_near[k];
    Real before = 0, after = 0;
    for (std::size_t j = 0; j < k; ++j) before += far_to_near[j].w * (Real(1) - dot(far_to_near[j], fk));
    for (std::size_t i = k + 1; i < n; ++i)
      after += far_to_near[i].sigma * far_to_near[i].w * (Real(1) - dot(far_to_near[i], fk));
    out[k] = fk.sigma * before + after;
  }
}

template <typename Real>
void grad_alpha(std::span<const Fragment<Real>> fragments, std::span<const Real> dl_dw,
                Real dl_dtfinal, Real t_final, std::span<Real> out) {
  Real behind = t_final * dl_dtfinal;
  for (std::size_t q = 0; q < fragments.size(); ++q) {
    const std::size_t k = fragments.size() - 1 - q;
    const Fragment<Real>& f = fragments[k];
    out[k] = f.T * dl_dw[k] - behind / (Real(1) - f.alpha);
    behind += dl_dw[k] * f.w;
  }
}

template <typename Real>
void grad_geometry(const ProjectedSplat<Real>& splat, const Vec3<Real>& ray,
                   const Fragment<Real>& frag, Real dl_dalpha, const Vec3<Real>& dl_dcolor,
                   SplatGradient<Real>& acc, BackwardStats& stats) {
  ++stats.fragments;
  acc.color += frag.w * dl_dcolor;
  if (frag.clamped) {
    ++stats.clamped;
    return;
  }
  if (dl_dalpha == Real(0)) return;
  const Real op = splat.opacity;
  acc.opacity_logit += dl_dalpha * frag.G * op * (Real(1) - op);

  const Real denom = ray.dot(splat.tw);
  if (!(std::abs(double(denom)) >= kGradientParallelEpsilon)) {
    ++stats.parallel_skipped;
    return;
  }
  const Real dl_dg = dl_dalpha * op;
  const Real gu = -dl_dg * frag.u * frag.G;
  const Real gv = -dl_dg * frag.v * frag.G;

  // u = (r . t_u) / s_u, v = (r . t_v) / s_v with r = z ray - center, z = (center . t_w) / (ray . t_w).
  const Vec3<Real> r = frag.z * ray - splat.center;
  const Vec3<Real> g_r = (gu / splat.su) * splat.tu + (gv / splat.sv) * splat.tv;
  acc.tu += (gu / splat.su) * r;
  acc.tv += (gv / splat.sv) * r;
  acc.log_scale[0] += -gu * frag.u;
  acc.log_scale[1] += -gv * frag.v;
  const Real dl_dz = g_r.dot(ray);
  acc.center += -g_r + (dl_dz / denom) * splat.tw;
  acc.tw += (-dl_dz / denom) * r;
}

template <typename Real>
void accumulate_world_gradient(const SplatGradient<Real>& g, const Primitive<Real>& prim,
                               const Camera& camera, GradBuffer<Real>& out, std::size_t index) {
  const Mat3<Real> r_t = camera.rotation().transpose().cast<Real>();
  out.position[index] += r_t * g.center;
  const Vec3<Real> a = r_t * g.tu, b = r_t * g.tv, c = r_t * g.tw;

  const Real norm = prim.rotation.norm();
  const Vec4<Real> n = prim.rotation / norm;
  const Real w = n[0], x = n[1], y = n[2], z = n[3];
  Vec4<Real> gq;
  gq[0] = a.dot(Vec3<Real>(0, 2 * z, -2 * y)) + b.dot(Vec3<Real>(-2 * z, 0, 2 * x)) +
          c.dot(Vec3<Real>(2 * y, -2 * x, 0));
  gq[1] = a.dot(Vec3<Real>(0, 2 * y, 2 * z)) + b.dot(Vec3<Real>(2 * y, -4 * x, 2 * w)) +
          c.dot(Vec3<Real>(2 * z, -2 * w, -4 * x));
  gq[2] = a.dot(Vec3<Real>(-4 * y, 2 * x, -2 * w)) + b.dot(Vec3<Real>(2 * x, 0, 2 * z)) +
          c.dot(Vec3<Real>(2 * w, 2 * z, -4 * y));
  gq[3] = a.dot(Vec3<Real>(-4 * z, 2 * w, 2 * x)) + b.dot(Vec3<Real>(-2 * w, -4 * z, 2 * y)) +
          c.dot(Vec3<Real>(2 * x, 2 * y, 0));
  // Through q / |q|: the result is tangent to the unit sphere at q.
  out.rotation[index] += (gq - n * n.dot(gq)) / norm;
  out.log_scale[index] += g.log_scale;
  out.opacity_logit[index] += g.opacity_logit;
  out.color[index] += g.color;
}

namespace {

struct ChunkPartial {
  double lgt = 0;
  double lcf = 0;
};

template <typename Real>
struct FragmentCache {
  std::vector<Fragment<Real>> fragments;
  std::vector<std::size_t> offsets{0};
  std::vector<Real> t_final;

  void push(const std::vector<Fragment<Real>>& frags, Real t) {
    fragments.insert(fragments.end(), frags.begin(), frags.end());
    offsets.push_back(fragments.size());
    t_final.push_back(t);
  }
};

}  // namespace

template <typename Real>
ViewLoss evaluate_view(const Scene<Real>& scene, const Camera& camera, const Image<float>& gt_image,
                       const FeatureMap& gt_features, const ObjectiveOptions& options,
                       ViewGradients<Real>* grads, Image<Real>* color_out) {
  const int h = camera.height, w = camera.width;
  if (!gt_image.same_shape(h, w, 3)) throw UsageError("evaluate_view: image does not match camera");
  if (gt_features.height() != h || gt_features.width() != w)
    throw UsageError("evaluate_view: feature map does not match camera");
  if (!scene.empty() && gt_features.channels() != scene.feature_dim)
    throw UsageError("evaluate_view: feature dimension mismatch");

  const PreparedView<Real> view = prepare_view(scene, camera, options.raster);
  const std::size_t chunks = static_cast<std::size_t>(view.chunk_count());
  const int threads = resolve_threads(options.raster.threads);
  const Vec3<Real> background = options.raster.background.cast<Real>();
  const Traversal traversal = options.raster.traversal;

  Image<Real> color(h, w, 3);
  std::vector<ChunkPartial> partials(chunks);
  // Fragments are kept per chunk so the backward pass need not re-intersect.
  const bool want_grad = grads != nullptr;
  std::vector<FragmentCache<Real>> cache(want_grad ? chunks : 0);
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    PixelScratch<Real> scratch;
    double lgt = 0, lcf = 0;
    for_each_pixel_in_chunk(view, static_cast<int>(chunk), [&](int row, int col) {
      const Real t_final = gather_fragments(view, row, col, scratch.fragments);
      if (want_grad) cache[chunk].push(scratch.fragments, t_final);
      scratch.colors.clear();
      for (const auto& f : scratch.fragments) scratch.colors.push_back(scene.primitives[f.primitive].color);
      const PixelComposite<Real> px = composite_pixel<Real>(scratch.fragments, scratch.colors, {}, background);
      for (int c = 0; c < 3; ++c) color.at(row, col, c) = px.color[c];
      const PixelFeatureLoss<Real> fl = evaluate_pixel<Real>(scratch.fragments, scene,
                                                             gt_features.at(row, col), options.ndfd,
                                                             traversal, scratch);
      lgt += double(fl.lgt);
      lcf += double(fl.lcf);
    });
    partials[chunk] = {lgt, lcf};
  });
  double lgt_sum = 0, lcf_sum = 0;
  for (const auto& p : partials) {
    lgt_sum += p.lgt;
    lcf_sum += p.lcf;
  }
  const double pixels = static_cast<double>(h) * w;
  const LossWeights& lw = options.weights;

  Image<Real> dl_dimage;
  const double l_rgb =
      photometric_loss(color, gt_image, options.photometric, want_grad ? &dl_dimage : nullptr);

  ViewLoss result;
  result.bundle = mix_losses(l_rgb, lgt_sum / pixels, lcf_sum / pixels, lw.lambda1, lw.lambda2);
  result.objective = lw.rgb * l_rgb + lw.lambda1 * result.bundle.l_gt + lw.lambda2 * result.bundle.l_cf;
  if (color_out) *color_out = color;
  if (!want_grad) return result;

  const std::size_t n = scene.size();
  const Real k_gt = Real(lw.lambda1 / pixels);
  const Real k_cf = Real(lw.lambda2 / pixels);
  const Real k_rgb = Real(lw.rgb);
  std::vector<std::vector<SplatGradient<Real>>> chunk_grads(chunks);
  std::vector<BackwardStats> chunk_stats(chunks);
  std::vector<std::vector<std::uint8_t>> chunk_seen(chunks);
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    auto& acc = chunk_grads[chunk];
    acc.assign(n, SplatGradient<Real>{});
    BackwardStats& stats = chunk_stats[chunk];
    auto& seen = chunk_seen[chunk];
    seen.assign(n, 0);
    PixelScratch<Real> scratch;
    const FragmentCache<Real>& fc = cache[chunk];
    std::size_t pixel = 0;
    for_each_pixel_in_chunk(view, static_cast<int>(chunk), [&](int row, int col) {
      const std::size_t p_idx = pixel++;
      auto& frags = scratch.fragments;
      frags.assign(fc.fragments.begin() + fc.offsets[p_idx], fc.fragments.begin() + fc.offsets[p_idx + 1]);
      const Real t_final = fc.t_final[p_idx];
      if (frags.empty()) return;
      evaluate_pixel<Real>(frags, scene, gt_features.at(row, col), options.ndfd, traversal, scratch);
      const std::size_t count = frags.size();
      scratch.dl_dw_cf.resize(count);
      grad_w_lcf<Real>(scratch.far_to_near, scratch.state, scratch.dl_dw_cf);

      Vec3<Real> dl_dcolor;
      for (int c = 0; c < 3; ++c) dl_dcolor[c] = k_rgb * dl_dimage.at(row, col, c);
      scratch.dl_dw.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t k = traversal == Traversal::standard ? count - 1 - i : i;
        scratch.dl_dw[i] = dl_dcolor.dot(scene.primitives[frags[i].primitive].color) +
                           k_gt * grad_w_lgt(frags[i]) + k_cf * scratch.dl_dw_cf[k];
      }
      scratch.dl_dalpha.resize(count);
      grad_alpha<Real>(frags, scratch.dl_dw, dl_dcolor.dot(background), t_final, scratch.dl_dalpha);

      const Vec3<Real> ray = camera.pixel_ray(row, col).template cast<Real>();
      for (std::size_t i = 0; i < count; ++i) {
        const auto p = frags[i].primitive;
        seen[p] = 1;
        grad_geometry(view.splats[p], ray, frags[i], scratch.dl_dalpha[i], dl_dcolor, acc[p], stats);
      }
    });
  });

  grads->grads.resize(n);
  grads->screen_grad.assign(n, Real(0));
  grads->visible.assign(n, 0);
  grads->stats = {};
  for (const auto& s : chunk_stats) grads->stats += s;
  SplatGradient<Real> total;
  for (std::size_t i = 0; i < n; ++i) {
    total = SplatGradient<Real>{};
    for (std::size_t c = 0; c < chunks; ++c) total += chunk_grads[c][i];
    accumulate_world_gradient(total, scene.primitives[i], camera, grads->grads, i);
    const Real z = view.splats[i].center.z();
    const Real gx = total.center.x() * z / Real(camera.fx) * Real(0.5 * w);
    const Real gy = total.center.y() * z / Real(camera.fy) * Real(0.5 * h);
    grads->screen_grad[i] = std::sqrt(gx * gx + gy * gy);
  }
  for (std::size_t c = 0; c < chunks; ++c)
    for (std::size_t i = 0; i < n; ++i) grads->visible[i] |= chunk_seen[c][i];
  return result;
}

LossSelector parse_loss_selector(std::string_view name) {
  if (name == "rgb") return LossSelector::rgb;
  if (name == "gt") return LossSelector::gt;
  if (name == "cf") return LossSelector::cf;
  if (name == "all") return LossSelector::all;
  throw UsageError("unknown loss selector '" + std::string(name) + "' (expected rgb|gt|cf|all)");
}

const char* to_string(LossSelector s) {
  switch (s) {
    case LossSelector::rgb: return "rgb";
    case LossSelector::gt: return "gt";
    case LossSelector::cf: return "cf";
    case LossSelector::all: return "all";
  }
  return "?";
}

LossWeights weights_for(LossSelector selector) {
  switch (selector) {
    case LossSelector::rgb: return {1.0, 0.0, 0.0};
    case LossSelector::gt: return {0.0, 1.0, 0.0};
    case LossSelector::cf: return {0.0, 0.0, 1.0};
    case LossSelector::all: return {1.0, 1.0, 1.0};
  }
  return {};
}

std::string FdReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << "fd_check: " << (passed ? "PASS" : "FAIL") << "\n";
  os << "  probes        " << probes << "\n";
  os << "  skipped       " << skipped << " (discontinuity)\n";
  os << "  per group     p " << group_probes[0] << ", q " << group_probes[1] << ", s " << group_probes[2]
     << ", opacity " << group_probes[3] << ", c " << group_probes[4] << "\n";
  os << "  max rel err   " << max_rel_err << "\n";
  os << "  mean rel err  " << mean_rel_err << "\n";
  os << "  error floor   " << floor << "\n";
  if (worst) {
    os << "  worst         primitive " << worst->primitive << " " << param_name(worst->param)
       << " analytic=" << worst->analytic << " numeric=" << worst->numeric << "\n";
  }
  if (!failure.empty()) os << "  failure       " << failure << "\n";
  return os.str();
}

FdReport fd_check(const Scene<double>& scene, const Camera& camera, const Image<float>& gt_image,
                  const FeatureMap& gt_features, const ObjectiveOptions& options,
                  const FdOptions& fd) {
  FdReport report;
  if (scene.empty()) return report;

  ViewGradients<double> vg;
  const double base = evaluate_view(scene, camera, gt_image, gt_features, options, &vg).objective;
  if (!vg.grads.all_finite() || !std::isfinite(base)) {
    report.passed = false;
    report.failure = "non-finite analytic gradient or loss";
    return report;
  }
  std::vector<std::size_t> candidates;
  double largest = 0;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!vg.visible[i]) continue;
    candidates.push_back(i);
    for (int k = 0; k < kNumParams; ++k) largest = std::max(largest, std::abs(vg.grads.get(i, k)));
  }
  if (candidates.empty()) return report;
  report.floor = std::max(fd.abs_floor, fd.rel_floor * largest);

  Scene<double> work = scene;
  auto objective = [&]() {
    return evaluate_view(work, camera, gt_image, gt_features, options).objective;
  };
  std::mt19937_64 rng(fd.seed);
  std::uniform_int_distribution<std::size_t> pick_prim(0, candidates.size() - 1);
  std::uniform_int_distribution<int> pick_param(0, kNumParams - 1);
  double err_sum = 0;
  const std::size_t max_attempts = fd.probes * 4 + 16;
  for (std::size_t attempt = 0; attempt < max_attempts && report.probes < fd.probes; ++attempt) {
    const std::size_t prim = candidates[pick_prim(rng)];
    const int param = pick_param(rng);
    double& value = work.primitives[prim].param(param);
    const double original = value;
    const double h = fd.step * std::max(1.0, std::abs(original));
    value = original + h;
    const double plus = objective();
    value = original - h;
    const double minus = objective();
    value = original;

    const double forward = (plus - base) / h;
    const double backward = (base - minus) / h;
    const double scale = std::max({std::abs(forward), std::abs(backward), report.floor});
    if (std::abs(forward - backward) > 0.1 * scale) {
      ++report.skipped;
      continue;
    }
    FdProbe probe;
    probe.primitive = prim;
    probe.param = param;
    probe.analytic = vg.grads.get(prim, param);
    probe.numeric = (plus - minus) / (2 * h);
    probe.rel_err = std::abs(probe.analytic - probe.numeric) /
                    std::max({std::abs(probe.analytic), std::abs(probe.numeric), report.floor});
    ++report.probes;
    ++report.group_probes[static_cast<std::size_t>(param_group(param))];
    err_sum += probe.rel_err;
    if (!report.worst || probe.rel_err > report.worst->rel_err) report.worst = probe;
  }
  if (report.probes > 0) {
    report.max_rel_err = report.worst->rel_err;
    report.mean_rel_err = err_sum / static_cast<double>(report.probes);
  }
  report.passed = report.max_rel_err <= fd.tolerance;
  if (report.probes < fd.probes) {
    report.passed = false;
    report.failure = "too many probes straddled discontinuities";
  }
  return report;
}

#define FHGS_INSTANTIATE(Real)                                                                    \
  template struct GradBuffer<Real>;                                                               \
  template struct SplatGradient<Real>;                                                            \
  template void grad_w_lcf(std::span<const WeightedFeature<Real>>, const AccumulatorState<Real>&, \
                           std::span<Real>);                                                      \
  template void grad_w_lcf_naive(std::span<const WeightedFeature<Real>>, int, std::span<Real>);   \
  template void grad_alpha(std::span<const Fragment<Real>>, std::span<const Real>, Real, Real,    \
                           std::span<Real>);                                                      \
  template void grad_geometry(const ProjectedSplat<Real>&, const Vec3<Real>&,                     \
                              const Fragment<Real>&, Real, const Vec3<Real>&,                     \
                              SplatGradient<Real>&, BackwardStats&);                              \
  template void accumulate_world_gradient(const SplatGradient<Real>&, const Primitive<Real>&,     \
                                          const Camera&, GradBuffer<Real>&, std::size_t);         \
  template ViewLoss evaluate_view(const Scene<Real>&, const Camera&, const Image<float>&,         \
                                  const FeatureMap&, const ObjectiveOptions&,                     \
                                  ViewGradients<Real>*, Image<Real>*);

FHGS_INSTANTIATE(float)
FHGS_INSTANTIATE(double)
#undef FHGS_INSTANTIATE

}  // namespace fhgs
