#pragma once

#include "fhgs/dual_drive.hpp"
#include "fhgs/photometric.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fhgs {

/// Per-primitive gradient accumulators. There is deliberately no slot for the
/// feature: it is frozen and never receives a gradient.
template <typename Real>
struct GradBuffer {
  std::vector<Vec3<Real>> position;
  std::vector<Vec4<Real>> rotation;
  std::vector<Vec2<Real>> log_scale;
  std::vector<Real> opacity_logit;
  std::vector<Vec3<Real>> color;

  void resize(std::size_t n);
  void zero();
  std::size_t size() const { return opacity_logit.size(); }
  /// Flattened access in Primitive::param order.
  Real get(std::size_t prim, int param) const;
  bool all_finite() const;
};

/// dL_gt/dw_k: the fragment's polarity (the feature is frozen, so sigma is constant in w).
template <typename Real>
Real grad_w_lgt(const Fragment<Real>& frag) {
  return frag.sigma;
}

/// dL_cf/dw for every fragment of a far-to-near list in O(N d), from one
/// reverse sweep that reuses the terminal cumulative sums W_N, F_N recorded
/// by the forward traversal.
template <typename Real>
void grad_w_lcf(std::span<const WeightedFeature<Real>> far_to_near,
                const AccumulatorState<Real>& terminal, std::span<Real> out);

/// Direct O(N^2 d) evaluation of the same two-term derivative; a test oracle.
template <typename Real>
void grad_w_lcf_naive(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim,
                      std::span<Real> out);

/// dL/dalpha for fragments in compositing order given dL/dw for each and
/// dL/dT_final (the background term). Single reverse sweep:
///   dL/dalpha_k = T_k dL/dw_k - (sum_{j>k} dL/dw_j w_j + T_final dL/dT_final) / (1 - alpha_k)
template <typename Real>
void grad_alpha(std::span<const Fragment<Real>> fragments, std::span<const Real> dl_dw,
                Real dl_dtfinal, Real t_final, std::span<Real> out);

/// Camera-frame gradient of one splat, summed over the pixels of one view.
template <typename Real>
struct SplatGradient {
  Vec3<Real> center = Vec3<Real>::Zero();
  Vec3<Real> tu = Vec3<Real>::Zero();
  Vec3<Real> tv = Vec3<Real>::Zero();
  Vec3<Real> tw = Vec3<Real>::Zero();
  Vec2<Real> log_scale = Vec2<Real>::Zero();
  Real opacity_logit = 0;
  Vec3<Real> color = Vec3<Real>::Zero();

  SplatGradient& operator+=(const SplatGradient& o);
};

struct BackwardStats {
  /// Fragments whose geometry gradient was dropped as near-parallel.
  std::size_t parallel_skipped = 0;
  std::size_t clamped = 0;
  std::size_t fragments = 0;

  BackwardStats& operator+=(const BackwardStats& o) {
    parallel_skipped += o.parallel_skipped;
    clamped += o.clamped;
    fragments += o.fragments;
    return *this;
  }
};

/// Chains dL/dalpha through alpha = op * G(u, v) and the ray/plane
/// intersection into the splat's camera-frame parameters, and adds the
/// color term w * dL/dcolor.
template <typename Real>
void grad_geometry(const ProjectedSplat<Real>& splat, const Vec3<Real>& ray,
                   const Fragment<Real>& frag, Real dl_dalpha, const Vec3<Real>& dl_dcolor,
                   SplatGradient<Real>& acc, BackwardStats& stats);

/// Maps a camera-frame splat gradient to world parameters (position, the
/// quaternion through its normalization, log-scale, opacity, color) and adds
/// it to slot `index` of the buffer.
template <typename Real>
void accumulate_world_gradient(const SplatGradient<Real>& g, const Primitive<Real>& prim,
                               const Camera& camera, GradBuffer<Real>& out, std::size_t index);

/// Multipliers of the three loss terms; lambda1 / lambda2 as in L = L_rgb + l1 L_gt + l2 L_cf.
struct LossWeights {
  double rgb = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
};

struct ObjectiveOptions {
  RasterOptions raster;
  NdfdOptions ndfd;
  PhotometricOptions photometric;
  LossWeights weights;
};

template <typename Real>
struct ViewGradients {
  GradBuffer<Real> grads;
  /// Norm of the gradient w.r.t. the projected center, in NDC units.
  std::vector<Real> screen_grad;
  /// 1 if the primitive produced at least one fragment in this view.
  std::vector<std::uint8_t> visible;
  BackwardStats stats;
};

struct ViewLoss {
  LossBundle bundle;
  /// rgb * L_rgb + lambda1 * L_gt + lambda2 * L_cf: the scalar being differentiated.
  double objective = 0;
};

/// Forward pass over one view (color, L_gt, L_cf) and, when grads is
/// non-null, the full analytic backward pass. Losses are means over pixels.
template <typename Real>
ViewLoss evaluate_view(const Scene<Real>& scene, const Camera& camera, const Image<float>& gt_image,
                       const FeatureMap& gt_features, const ObjectiveOptions& options,
                       ViewGradients<Real>* grads = nullptr, Image<Real>* color_out = nullptr);

enum class LossSelector { rgb, gt, cf, all };

LossSelector parse_loss_selector(std::string_view name);
const char* to_string(LossSelector s);

/// Weights that isolate one term (weight 1) or combine all three with weight 1.
LossWeights weights_for(LossSelector selector);

struct FdOptions {
  std::size_t probes = 200;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  /// Central-difference step, scaled by max(1, |param|).
  double step = 1e-5;
  /// Errors are measured against max(|analytic|, |numeric|, floor) where
  /// floor = max(abs_floor, rel_floor * largest |analytic| component).
  double abs_floor = 1e-12;
  double rel_floor = 1e-4;
};

struct FdProbe {
  std::size_t primitive = 0;
  int param = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct FdReport {
  std::size_t probes = 0;
  /// Probes that straddled a discontinuity (cutoff, clamp, reordering) and were redrawn.
  std::size_t skipped = 0;
  double max_rel_err = 0;
  double mean_rel_err = 0;
  double floor = 0;
  /// Accepted probes per parameter group (position, rotation, scale, opacity, color).
  std::array<std::size_t, 5> group_probes{};
  std::optional<FdProbe> worst;
  bool passed = true;
  std::string failure;

  std::string to_text() const;
};

/// Central-difference comparison of evaluate_view's analytic gradient over
/// randomly drawn (primitive, parameter) pairs of visible primitives.
/// Evaluates perturbed copies; the input scene is never touched.
FdReport fd_check(const Scene<double>& scene, const Camera& camera, const Image<float>& gt_image,
                  const FeatureMap& gt_features, const ObjectiveOptions& options,
                  const FdOptions& fd);

}  // namespace fhgs
