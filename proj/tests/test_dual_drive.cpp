#include "support.hpp"

#include <doctest.h>

using namespace fhgs;
using namespace fhgs::testing;

TEST_CASE("polarity: midpoint, monotonicity and point symmetry") {
  const SimilarityActivation act;
  CHECK(polarity(0.5, act) == 0.5);
  double prev = 2.0;
  for (int i = 0; i <= 400; ++i) {
    const double phi = -1.0 + i * 0.005;
    const double s = polarity(phi, act);
    CHECK(s < prev);
    prev = s;
  }
  for (double d : {0.1, 0.3, 0.5}) CHECK(std::abs(polarity(0.5 + d, act) + polarity(0.5 - d, act) - 1.0) <= 1e-12);
}

TEST_CASE("polarity clamps the cosine to [-1, 1]") {
  const SimilarityActivation act;
  CHECK(polarity(1.5, act) == polarity(1.0, act));
  CHECK(polarity(-3.0, act) == polarity(-1.0, act));
}

TEST_CASE("activation parameters are validated") {
  SimilarityActivation act;
  act.slope = 0;
  CHECK_THROWS_AS(act.validate(), InvalidParameter);
  act.slope = 20;
  act.threshold = 1.5;
  CHECK_THROWS_AS(act.validate(), InvalidParameter);
}

TEST_CASE("linear clustering loss equals the pairwise sum") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> len(0, 64);
  for (int d : {4, 16}) {
    for (int trial = 0; trial < 100; ++trial) {
      const FragmentList fl = random_fragments(rng, len(rng), d);
      const double lin = lcf_linear<double>(fl.frags, d);
      const double ref = lcf_bruteforce<double>(fl.frags, d);
      CHECK(std::abs(lin - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST_CASE("clustering loss of identical features vanishes and of orthogonal ones is the weight product") {
  std::vector<double> a = {1, 0}, b = {0, 1};
  std::vector<WeightedFeature<double>> same = {{0.3, 1.0, a.data()}, {0.4, 1.0, a.data()}};
  CHECK(lcf_linear<double>(same, 2) == doctest::Approx(0.0));
  // Only the nearer fragment (index 1) is charged, against the farther one.
  std::vector<WeightedFeature<double>> ortho = {{0.3, 0.7, a.data()}, {0.4, 0.5, b.data()}};
  CHECK(lcf_linear<double>(ortho, 2) == doctest::Approx(0.5 * 0.4 * 0.3));
  CHECK(lcf_linear<double>({}, 2) == 0.0);
}

TEST_CASE("pixel_fe is the sigma-weighted weight sum") {
  std::vector<double> f = {1.0};
  std::vector<WeightedFeature<double>> frags = {{0.2, 0.5, f.data()}, {0.3, 0.1, f.data()}};
  CHECK(pixel_fe<double>(frags) == doctest::Approx(0.13));
}

TEST_CASE("evaluate_pixel computes cosines, polarities and both losses in either traversal") {
  std::mt19937_64 rng(42);
  const int d = 6;
  const Camera cam = test_camera(32, 32);
  const Scene<double> s = random_scene<double>(rng, 60, d, 0.5, -2.0, -1.0);
  const auto gt = random_unit(rng, d);
  std::vector<float> gtf(gt.begin(), gt.end());
  for (Traversal trav : {Traversal::standard, Traversal::paper_literal}) {
    for (bool invert : {false, true}) {
      RasterOptions ro;
      ro.traversal = trav;
      const auto view = prepare_view(s, cam, ro);
      NdfdOptions nd;
      nd.invert_cf_polarity = invert;
      PixelScratch<double> scratch;
      std::size_t checked = 0;
      for (int row = 8; row < 24; row += 4) {
        for (int col = 8; col < 24; col += 4) {
          std::vector<Fragment<double>> frags;
          gather_fragments(view, row, col, frags);
          const auto loss = evaluate_pixel<double>(frags, s, gtf.data(), nd, trav, scratch);
          double lgt = 0;
          std::vector<WeightedFeature<double>> far_to_near;
          for (const auto& f : frags) {
            double phi = 0;
            for (int c = 0; c < d; ++c) phi += s.primitives[f.primitive].feature[c] * double(gtf[c]);
            const double sigma = polarity(phi, nd.activation);
            CHECK(f.phi == doctest::Approx(phi).epsilon(1e-12));
            CHECK(f.sigma == doctest::Approx(sigma).epsilon(1e-12));
            lgt += f.w * sigma;
            far_to_near.push_back({f.w, invert ? 1 - sigma : sigma, s.primitives[f.primitive].feature.data()});
          }
          if (trav == Traversal::standard) std::reverse(far_to_near.begin(), far_to_near.end());
          CHECK(loss.lgt == doctest::Approx(lgt).epsilon(1e-12));
          CHECK(loss.lcf == doctest::Approx(lcf_bruteforce<double>(far_to_near, d)).epsilon(1e-10));
          checked += frags.size();
        }
      }
      CHECK(checked > 20);
    }
  }
}

TEST_CASE("mix_losses weights the three terms") {
  const LossBundle b = mix_losses(0.5, 0.2, 0.1, 1.0, 0.1);
  CHECK(b.total == doctest::Approx(0.5 + 0.2 + 0.01));
  CHECK(b.finite());
  CHECK_FALSE(mix_losses(NAN, 0, 0, 1, 1).finite());
}
