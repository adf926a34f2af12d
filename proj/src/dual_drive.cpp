#include "fhgs/dual_drive.hpp"

#include <cmath>

namespace fhgs {

void SimilarityActivation::validate() const {
  if (!(slope > 0)) throw InvalidParameter("similarity slope k must be positive");
  if (!(threshold >= -1.0 && threshold <= 1.0))
    throw InvalidParameter("similarity threshold must lie in [-1, 1]");
}

template <typename Real>
Real lcf_linear(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim) {
  AccumulatorState<Real> state(feature_dim);
  for (const auto& f : far_to_near) accumulate_lcf(state, f);
  return state.lcf;
}

template <typename Real>
Real lcf_bruteforce(std::span<const WeightedFeature<Real>> far_to_near, int feature_dim) {
  Real total = 0;
  for (std::size_t i = 0; i < far_to_near.size(); ++i) {
    const auto& fi = far_to_near[i];
    for (std::size_t j = 0; j < i; ++j) {
      const auto& fj = far_to_near[j];
      Real dot = 0;
      for (int c = 0; c < feature_dim; ++c) dot += fi.feature[c] * fj.feature[c];
      total += fi.sigma * fi.w * fj.w * (Real(1) - dot);
    }
  }
  return total;
}

template <typename Real>
Real pixel_fe(std::span<const WeightedFeature<Real>> fragments) {
  AccumulatorState<Real> state;
  for (const auto& f : fragments) accumulate_lgt(state, f);
  return state.lgt;
}

template <typename Real>
PixelFeatureLoss<Real> evaluate_pixel(std::span<Fragment<Real>> fragments, const Scene<Real>& scene,
                                      const float* gt_feature, const NdfdOptions& options,
                                      Traversal traversal, PixelScratch<Real>& scratch) {
  const int d = scene.feature_dim;
  const std::size_t n = fragments.size();
  scratch.far_to_near.resize(n);
  scratch.state.reset(d);
  AccumulatorState<Real>& state = scratch.state;

  for (auto& frag : fragments) {
    const auto& f = scene.primitives[frag.primitive].feature;
    Real phi = 0;
    for (int c = 0; c < d; ++c) phi += f[c] * Real(gt_feature[c]);
    frag.phi = phi;
    frag.sigma = polarity(phi, options.activation);
    accumulate_lgt(state, WeightedFeature<Real>{frag.w, frag.sigma, f.data()});
  }
  // Compositing order is near-to-far in standard mode, far-to-near when literal.
  for (std::size_t k = 0; k < n; ++k) {
    const Fragment<Real>& frag = fragments[traversal == Traversal::standard ? n - 1 - k : k];
    const Real sigma = options.invert_cf_polarity ? Real(1) - frag.sigma : frag.sigma;
    scratch.far_to_near[k] =
        WeightedFeature<Real>{frag.w, sigma, scene.primitives[frag.primitive].feature.data()};
    accumulate_lcf(state, scratch.far_to_near[k]);
  }
  return {state.lgt, state.lcf};
}

bool LossBundle::finite() const {
  return std::isfinite(l_rgb) && std::isfinite(l_gt) && std::isfinite(l_cf) &&
         std::isfinite(total);
}

LossBundle mix_losses(double l_rgb, double l_gt, double l_cf, double lambda1, double lambda2) {
  LossBundle b;
  b.l_rgb = l_rgb;
  b.l_gt = l_gt;
  b.l_cf = l_cf;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = l_rgb + lambda1 * l_gt + lambda2 * l_cf;
  return b;
}

#define FHGS_INSTANTIATE(Real)                                                                  \
  template Real lcf_linear(std::span<const WeightedFeature<Real>>, int);                        \
  template Real lcf_bruteforce(std::span<const WeightedFeature<Real>>, int);                    \
  template Real pixel_fe(std::span<const WeightedFeature<Real>>);                               \
  template PixelFeatureLoss<Real> evaluate_pixel(std::span<Fragment<Real>>, const Scene<Real>&, \
                                                 const float*, const NdfdOptions&, Traversal,   \
                                                 PixelScratch<Real>&);

FHGS_INSTANTIATE(float)
FHGS_INSTANTIATE(double)
#undef FHGS_INSTANTIATE

}  // namespace fhgs
