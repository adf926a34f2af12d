#include "fhgs/photometric.hpp"

#include <array>
#include <cmath>

namespace fhgs {
namespace {

constexpr int kWindow = 11;
constexpr int kRadius = kWindow / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> k{};
  double sum = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kRadius;
    k[i] = std::exp(-x * x / (2 * 1.5 * 1.5));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable zero-padded "same" filter of one channel plane. The kernel is
/// symmetric, so this operator is its own adjoint.
std::vector<double> blur(const std::vector<double>& src, int h, int w) {
  static const auto k = gaussian_window();
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int o = -kRadius; o <= kRadius; ++o) {
        const int cc = c + o;
        if (cc >= 0 && cc < w) acc += k[o + kRadius] * src[r * w + cc];
      }
      tmp[r * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int o = -kRadius; o <= kRadius; ++o) {
        const int rr = r + o;
        if (rr >= 0 && rr < h) acc += k[o + kRadius] * tmp[rr * w + c];
      }
      out[r * w + c] = acc;
    }
  return out;
}

struct SsimChannel {
  double sum = 0;
  std::vector<double> grad;  // d(sum of ssim map)/dx
};

SsimChannel ssim_channel(const std::vector<double>& x, const std::vector<double>& y, int h, int w,
                         bool want_grad) {
  const std::size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = blur(x, h, w), my = blur(y, h, w);
  const auto exx = blur(xx, h, w), eyy = blur(yy, h, w), exy = blur(xy, h, w);
  SsimChannel out;
  std::vector<double> d_mx(n), d_exx(n), d_exy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2 * mx[i] * my[i] + kC1;
    const double b = 2 * (exy[i] - mx[i] * my[i]) + kC2;
    const double c = mx[i] * mx[i] + my[i] * my[i] + kC1;
    const double d = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kC2;
    const double s = a * b / (c * d);
    out.sum += s;
    if (!want_grad) continue;
    d_mx[i] = (2 * my[i] * b - 2 * my[i] * a) / (c * d) - s * (2 * mx[i] / c - 2 * mx[i] / d);
    d_exx[i] = -s / d;
    d_exy[i] = 2 * a / (c * d);
  }
  if (want_grad) {
    const auto g_mx = blur(d_mx, h, w), g_exx = blur(d_exx, h, w), g_exy = blur(d_exy, h, w);
    out.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.grad[i] = g_mx[i] + 2 * x[i] * g_exx[i] + y[i] * g_exy[i];
  }
  return out;
}

std::vector<double> plane(const Image<double>& img, int ch) {
  std::vector<double> p(img.pixel_count());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + ch];
  return p;
}

}  // namespace

double mean_ssim(const Image<double>& a, const Image<double>& b) {
  if (!b.same_shape(a.height, a.width, a.channels)) throw UsageError("mean_ssim: shape mismatch");
  double sum = 0;
  for (int ch = 0; ch < a.channels; ++ch)
    sum += ssim_channel(plane(a, ch), plane(b, ch), a.height, a.width, false).sum;
  return sum / static_cast<double>(a.data.size());
}

template <typename Real>
double photometric_loss(const Image<Real>& render, const Image<float>& gt,
                        const PhotometricOptions& options, Image<Real>* grad) {
  if (!gt.same_shape(render.height, render.width, render.channels))
    throw UsageError("photometric_loss: render and ground truth differ in shape");
  const double m = static_cast<double>(render.data.size());
  const double lambda = options.pure_l1 ? 0.0 : options.ssim_weight;
  double l1 = 0;
  for (std::size_t i = 0; i < render.data.size(); ++i) l1 += std::abs(double(render.data[i]) - gt.data[i]);
  l1 /= m;
  if (grad) {
    *grad = Image<Real>(render.height, render.width, render.channels);
    for (std::size_t i = 0; i < render.data.size(); ++i) {
      const double diff = double(render.data[i]) - gt.data[i];
      const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      grad->data[i] = static_cast<Real>((1 - lambda) * sign / m);
    }
  }
  if (lambda == 0) return l1;

  const Image<double> x = render.template cast<double>();
  const Image<double> y = gt.cast<double>();
  double ssim_sum = 0;
  for (int ch = 0; ch < render.channels; ++ch) {
    const SsimChannel s = ssim_channel(plane(x, ch), plane(y, ch), x.height, x.width, grad != nullptr);
    ssim_sum += s.sum;
    if (grad) {
      for (std::size_t i = 0; i < s.grad.size(); ++i) {
        auto& g = grad->data[i * render.channels + ch];
        g = static_cast<Real>(double(g) - lambda * s.grad[i] / m);
      }
    }
  }
  return (1 - lambda) * l1 + lambda * (1 - ssim_sum / m);
}

template double photometric_loss(const Image<float>&, const Image<float>&, const PhotometricOptions&,
                                 Image<float>*);
template double photometric_loss(const Image<double>&, const Image<float>&, const PhotometricOptions&,
                                 Image<double>*);

}  // namespace fhgs
