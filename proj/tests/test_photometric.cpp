#include "support.hpp"

#include <doctest.h>

using namespace fhgs;
using namespace fhgs::testing;

TEST_CASE("SSIM of an image with itself is one and drops under noise") {
  std::mt19937_64 rng(71);
  const Image<float> a = random_image(rng, 20, 24, 3);
  const Image<double> ad = a.cast<double>();
  CHECK(mean_ssim(ad, ad) == doctest::Approx(1.0).epsilon(1e-12));
  Image<double> b = ad;
  std::normal_distribution<double> n(0, 0.1);
  for (auto& x : b.data) x += n(rng);
  CHECK(mean_ssim(ad, b) < 0.95);
}

TEST_CASE("photometric loss of a perfect render is zero") {
  std::mt19937_64 rng(72);
  const Image<float> gt = random_image(rng, 16, 16, 3);
  Image<double> grad;
  CHECK(photometric_loss(gt.cast<double>(), gt, PhotometricOptions{}, &grad) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pure L1 mode is the mean absolute difference") {
  Image<float> gt(2, 2, 3, 0.5f);
  Image<double> r(2, 2, 3, 0.75);
  PhotometricOptions po;
  po.pure_l1 = true;
  CHECK(photometric_loss<double>(r, gt, po, nullptr) == doctest::Approx(0.25));
}

TEST_CASE("photometric gradient matches central differences") {
  std::mt19937_64 rng(73);
  const Image<float> gt = random_image(rng, 14, 13, 3);
  Image<double> r = random_image(rng, 14, 13, 3).cast<double>();
  PhotometricOptions po;
  Image<double> grad;
  photometric_loss(r, gt, po, &grad);
  std::uniform_int_distribution<std::size_t> pick(0, r.data.size() - 1);
  for (int probe = 0; probe < 60; ++probe) {
    const std::size_t i = pick(rng);
    const double x0 = r.data[i], h = 1e-6;
    r.data[i] = x0 + h;
    const double lp = photometric_loss<double>(r, gt, po, nullptr);
    r.data[i] = x0 - h;
    const double lm = photometric_loss<double>(r, gt, po, nullptr);
    r.data[i] = x0;
    CHECK(grad.data[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5).scale(1e-6));
  }
}
