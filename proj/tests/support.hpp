#pragma once

// Shared fixtures and reference implementations for the test suites.

#include "fhgs/backward.hpp"
#include "fhgs/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace fhgs::testing {

inline Camera test_camera(int width = 64, int height = 64, int id = 0,
                          Eigen::Vector3d eye = {0.3, -0.2, -4.0}) {
  const double f = 1.2 * width;
  return look_at(id, width, height, f, f, eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY());
}

inline std::vector<double> random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(d));
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = n(rng);
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

/// Random primitives inside a cube of half-width `spread` around the origin.
template <typename Real>
Scene<Real> random_scene(std::mt19937_64& rng, std::size_t n, int d, double spread = 0.8,
                         double log_scale_min = -3.0, double log_scale_max = -1.6) {
  std::uniform_real_distribution<double> pos(-spread, spread);
  std::uniform_real_distribution<double> ls(log_scale_min, log_scale_max);
  std::uniform_real_distribution<double> op(-2.0, 3.0);
  std::uniform_real_distribution<double> col(0.0, 1.0);
  Scene<Real> scene;
  scene.feature_dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    Primitive<Real> p;
    p.position = Vec3<Real>(Real(pos(rng)), Real(pos(rng)), Real(pos(rng)));
    const auto q = random_unit(rng, 4);
    p.rotation = Vec4<Real>(Real(q[0]), Real(q[1]), Real(q[2]), Real(q[3]));
    p.log_scale = Vec2<Real>(Real(ls(rng)), Real(ls(rng)));
    p.opacity_logit = Real(op(rng));
    p.color = Vec3<Real>(Real(col(rng)), Real(col(rng)), Real(col(rng)));
    const auto f = random_unit(rng, d);
    p.feature.assign(f.begin(), f.end());
    scene.primitives.push_back(std::move(p));
  }
  return scene;
}

inline Image<float> random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image<float> img(h, w, c);
  for (auto& x : img.data) x = u(rng);
  return img;
}

/// Ground-truth feature map made of a few unit vectors laid out in vertical bands.
inline FeatureMap banded_features(std::mt19937_64& rng, int h, int w, int d, int bands = 3, int view_id = 0) {
  std::vector<std::vector<double>> palette;
  for (int b = 0; b < bands; ++b) palette.push_back(random_unit(rng, d));
  FeatureMap fm;
  fm.view_id = view_id;
  fm.grid = Image<float>(h, w, d);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto& f = palette[static_cast<std::size_t>(c * bands / w)];
      for (int k = 0; k < d; ++k) fm.grid.at(r, c, k) = static_cast<float>(f[static_cast<std::size_t>(k)]);
    }
  return fm;
}

template <typename Real>
struct NaivePixel {
  Vec3<Real> color = Vec3<Real>::Zero();
  Real weight_sum = 0;
  std::vector<Real> transmittance;
};

/// Reference renderer: one global depth sort of every primitive, then a
/// per-pixel walk over all of them with no tiling and no screen bounds.
template <typename Real>
Image<Real> naive_render(const Scene<Real>& scene, const Camera& camera, const RasterOptions& options,
                         std::vector<NaivePixel<Real>>* pixels = nullptr) {
  std::vector<ProjectedSplat<Real>> splats;
  for (const auto& p : scene.primitives) splats.push_back(project_splat(p, camera, options.cutoff_sigma));
  std::vector<std::size_t> order(splats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return depth_key(static_cast<float>(splats[a].center.z())) < depth_key(static_cast<float>(splats[b].center.z()));
  });
  if (options.traversal == Traversal::paper_literal) std::reverse(order.begin(), order.end());

  const Real cutoff_sq = Real(options.cutoff_sigma * options.cutoff_sigma);
  Image<Real> out(camera.height, camera.width, 3);
  if (pixels) pixels->assign(out.pixel_count(), {});
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const Vec3<Real> ray = camera.pixel_ray(row, col).template cast<Real>();
      NaivePixel<Real> px;
      Real T = 1;
      px.transmittance.push_back(T);
      for (std::size_t i : order) {
        Real u, v, z;
        if (!intersect_plane(splats[i], ray, u, v, z) || u * u + v * v > cutoff_sq) continue;
        Real alpha = splats[i].opacity * eval_gaussian(u, v);
        if (double(alpha) > kMaxAlpha) alpha = Real(kMaxAlpha);
        const Real w = alpha * T;
        px.color += w * scene.primitives[i].color;
        px.weight_sum += w;
        T *= Real(1) - alpha;
        px.transmittance.push_back(T);
        if (double(T) < kMinTransmittance) break;
      }
      px.color += T * options.background.cast<Real>();
      for (int c = 0; c < 3; ++c) out.at(row, col, c) = px.color[c];
      if (pixels) (*pixels)[static_cast<std::size_t>(row) * camera.width + col] = std::move(px);
    }
  }
  return out;
}

/// Random far-to-near fragment lists for the feature-loss identities.
struct FragmentList {
  int d = 0;
  std::vector<std::vector<double>> features;
  std::vector<WeightedFeature<double>> frags;
};

inline FragmentList random_fragments(std::mt19937_64& rng, std::size_t n, int d) {
  std::uniform_real_distribution<double> alpha(0.01, 0.99);
  std::uniform_real_distribution<double> sig(0.0, 1.0);
  FragmentList out;
  out.d = d;
  out.features.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.features.push_back(random_unit(rng, d));
  double T = 1;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = alpha(rng);
    w[i] = a * T;
    T *= 1 - a;
  }
  // Weights were generated near-to-far; store far-to-near.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = n - 1 - i;
    out.frags.push_back({w[src], sig(rng), out.features[src].data()});
  }
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fhgs_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Small synthetic dataset used by several suites (two spheres, 4 views, 48x48).
inline SynthScene small_synth(std::uint64_t seed = 3, bool ground = true) {
  SynthSpec spec;
  spec.views = 4;
  spec.width = 48;
  spec.height = 48;
  spec.feature_dim = 8;
  spec.points_per_object = 120;
  spec.ground_points = 200;
  spec.ground_plane = ground;
  spec.seed = seed;
  return synth_scene(spec);
}

}  // namespace fhgs::testing
