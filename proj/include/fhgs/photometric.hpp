#pragma once

#include "fhgs/scene.hpp"

namespace fhgs {

/// L_rgb = (1 - ssim_weight) * L1 + ssim_weight * (1 - SSIM), both means over
/// pixels and channels. SSIM uses an 11x11 gaussian window (sigma 1.5) with
/// zero padding.
struct PhotometricOptions {
  double ssim_weight = 0.2;
  bool pure_l1 = false;
};

double mean_ssim(const Image<double>& a, const Image<double>& b);

/// Returns L_rgb and, when grad is non-null, writes dL_rgb/d(render) into it.
template <typename Real>
double photometric_loss(const Image<Real>& render, const Image<float>& gt,
                        const PhotometricOptions& options, Image<Real>* grad);

}  // namespace fhgs
