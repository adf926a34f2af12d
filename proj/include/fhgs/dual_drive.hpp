#pragma once

#include "fhgs/rasterizer.hpp"

#include <span>
#include <vector>

namespace fhgs {

/// Sigmoid polarity sigma = 1 / (1 + exp(slope * (phi - threshold))).
/// Large for primitives dissimilar to the ground truth, small for matches.
struct SimilarityActivation {
  double threshold = 0.5;
  double slope = 20.0;

  void validate() const;
};

template <typename Real>
Real polarity(Real phi, const SimilarityActivation& act) {
  using std::exp;
  if (phi > Real(1)) phi = Real(1);
  if (phi < Real(-1)) phi = Real(-1);
  return Real(1) / (Real(1) + exp(Real(act.slope) * (phi - Real(act.threshold))));
}

/// What the feature losses see of one fragment.
template <typename Real>
struct WeightedFeature {
  Real w = 0;
  Real sigma = 0;
  const Real* feature = nullptr;
};

/// Running state of the linear-time feature traversal of one pixel.
template <typename Real>
struct AccumulatorState {
  Real W_cum = 0;
  std::vector<Real> F_cum;
  Real T = 1;
  Real lgt = 0;
  Real lcf = 0;

  explicit AccumulatorState(int feature_dim = 0) { reset(feature_dim); }
  void reset(int feature_dim) {
    W_cum = 0;
    F_cum.assign(static_cast<std::size_t>(feature_dim), Real(0));
    T = 1;
    lgt = 0;
    lcf = 0;
  }
};

template <typename Real>
void accumulate_lgt(AccumulatorState<Real>& state, const WeightedFeature<Real>& frag) {
  state.lgt += frag.w * frag.sigma;
}

/// Adds sigma_i w_i (W_cum - F_cum . f_i), then folds the fragment into W_cum and F_cum.
template <typename Real>
void accumulate_lcf(AccumulatorState<Real>& state, const WeightedFeature<Real>& frag) {
  const std::size_t d = state.F_cum.size();
  Real dot = 0;
  for (std::size_t c = 0; c < d; ++c) dot += state.F_cum[c] * frag.feature[c];
  state.lcf += frag.sigma * frag.w * (state.W_cum - dot);
  state.W_cum += frag.w;
  for (std::size_t c = 0; c < d; ++c) state.F_cum[c] += frag.w * frag.feature[c];
}

/// Internal clustering loss of a far-to-near fragment list in O(N d).
template <typename Real>
Real lcf_linear(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim);

/// Reference double sum over ordered pairs j < i of sigma_i w_i w_j (1 - f_i . f_j).
/// O(N^2 d); a test oracle for lcf_linear.
template <typename Real>
Real lcf_bruteforce(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim);

/// Per-pixel external potential: sum of w_i sigma_i.
template <typename Real>
Real pixel_fe(std::span<const WeightedFeature<Real>> fragments);

struct NdfdOptions {
  SimilarityActivation activation;
  /// Experiment switch: use 1 - sigma inside the clustering term only.
  bool invert_cf_polarity = false;
};

template <typename Real>
struct PixelFeatureLoss {
  Real lgt = 0;
  Real lcf = 0;
};

/// Reusable buffers for one worker.
template <typename Real>
struct PixelScratch {
  std::vector<Fragment<Real>> fragments;
  std::vector<WeightedFeature<Real>> far_to_near;
  std::vector<Real> dl_dw;
  std::vector<Real> dl_dw_cf;
  std::vector<Real> dl_dalpha;
  std::vector<Vec3<Real>> colors;
  AccumulatorState<Real> state;
};

/// Fills phi and sigma of every fragment against the pixel's ground-truth
/// feature, lays the fragments out far-to-near in scratch.far_to_near
/// (clustering-term sigma, honoring invert_cf_polarity) and returns both losses.
template <typename Real>
PixelFeatureLoss<Real> evaluate_pixel(std::span<Fragment<Real>> fragments, const Scene<Real>& scene,
                                      const float* gt_feature, const NdfdOptions& options,
                                      Traversal traversal, PixelScratch<Real>& scratch);

struct LossBundle {
  double l_rgb = 0;
  double l_gt = 0;
  double l_cf = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  double total = 0;

  bool finite() const;
};

/// total = l_rgb + lambda1 * l_gt + lambda2 * l_cf.
LossBundle mix_losses(double l_rgb, double l_gt, double l_cf, double lambda1, double lambda2);

}  // namespace fhgs
