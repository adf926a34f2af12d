#include "fhgs/rasterizer.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <string>

namespace fhgs {

Traversal parse_traversal(std::string_view name) {
  if (name == "standard") return Traversal::standard;
  if (name == "paper_literal") return Traversal::paper_literal;
  throw UsageError("unknown traversal '" + std::string(name) + "' (expected standard|paper_literal)");
}

const char* to_string(Traversal t) {
  return t == Traversal::standard ? "standard" : "paper_literal";
}

RenderMode parse_render_mode(std::string_view name) {
  if (name == "rgb") return RenderMode::rgb;
  if (name == "depth") return RenderMode::depth;
  if (name == "normal") return RenderMode::normal;
  if (name == "feature") return RenderMode::feature;
  if (name == "weight") return RenderMode::weight;
  throw UsageError("unknown render mode '" + std::string(name) +
                   "' (expected rgb|depth|normal|feature|weight)");
}

const char* to_string(RenderMode m) {
  switch (m) {
    case RenderMode::rgb: return "rgb";
    case RenderMode::depth: return "depth";
    case RenderMode::normal: return "normal";
    case RenderMode::feature: return "feature";
    case RenderMode::weight: return "weight";
  }
  return "?";
}

std::uint32_t depth_key(float z) {
  if (z == 0.0f) z = 0.0f;  // fold -0 onto +0
  const auto bits = std::bit_cast<std::uint32_t>(z);
  return (bits & 0x80000000u) ? ~bits : (bits | 0x80000000u);
}

void radix_sort_pairs(std::vector<std::uint64_t>& keys, std::vector<std::uint32_t>& values) {
  const std::size_t n = keys.size();
  if (n < 2) return;
  std::vector<std::uint64_t> key_tmp(n);
  std::vector<std::uint32_t> val_tmp(n);
  std::uint64_t all_or = 0, all_and = ~std::uint64_t{0};
  for (auto k : keys) {
    all_or |= k;
    all_and &= k;
  }
  const std::uint64_t varying = all_or ^ all_and;
  for (int shift = 0; shift < 64; shift += 8) {
    if (((varying >> shift) & 0xffu) == 0) continue;
    std::array<std::size_t, 257> offsets{};
    for (auto k : keys) ++offsets[((k >> shift) & 0xffu) + 1];
    for (int b = 0; b < 256; ++b) offsets[b + 1] += offsets[b];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t dst = offsets[(keys[i] >> shift) & 0xffu]++;
      key_tmp[dst] = keys[i];
      val_tmp[dst] = values[i];
    }
    keys.swap(key_tmp);
    values.swap(val_tmp);
  }
}

template <typename Real>
BinnedInstances bin_and_sort(std::span<const ProjectedSplat<Real>> splats, int width, int height,
                             int tile_size) {
  if (tile_size <= 0) throw UsageError("tile size must be positive");
  BinnedInstances out;
  TileGrid& grid = out.grid;
  grid.tile_size = tile_size;
  grid.tiles_x = (width + tile_size - 1) / tile_size;
  grid.tiles_y = (height + tile_size - 1) / tile_size;
  grid.ranges.assign(static_cast<std::size_t>(grid.tile_count()), {0u, 0u});

  for (std::size_t i = 0; i < splats.size(); ++i) {
    const PixelRect& b = splats[i].bounds;
    if (b.empty()) continue;
    const float depth = static_cast<float>(splats[i].center.z());
    for (int ty = b.row_min / tile_size; ty <= b.row_max / tile_size; ++ty) {
      for (int tx = b.col_min / tile_size; tx <= b.col_max / tile_size; ++tx) {
        const auto tile = static_cast<std::uint32_t>(ty * grid.tiles_x + tx);
        out.keys.push_back(instance_key(tile, depth));
        out.primitives.push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
  radix_sort_pairs(out.keys, out.primitives);

  const auto n = static_cast<std::uint32_t>(out.keys.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto tile = static_cast<std::size_t>(out.keys[i] >> 32);
    if (i == 0 || (out.keys[i - 1] >> 32) != tile) grid.ranges[tile].first = i;
    if (i + 1 == n || (out.keys[i + 1] >> 32) != tile) grid.ranges[tile].second = i + 1;
  }
  return out;
}

template <typename Real>
PixelComposite<Real> composite_pixel(std::span<Fragment<Real>> fragments,
                                     std::span<const Vec3<Real>> colors,
                                     std::span<const Vec3<Real>> normals,
                                     const Vec3<Real>& background) {
  PixelComposite<Real> out;
  Real T = 1;
  Real weighted_depth = 0;
  Vec3<Real> normal_sum = Vec3<Real>::Zero();
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    Fragment<Real>& f = fragments[i];
    f.T = T;
    f.w = f.alpha * T;
    out.color += f.w * colors[i];
    out.weight_sum += f.w;
    weighted_depth += f.w * f.z;
    if (!normals.empty()) normal_sum += f.w * normals[i];
    T *= Real(1) - f.alpha;
    out.used = i + 1;
    if (double(T) < kMinTransmittance) break;
  }
  out.transmittance = T;
  out.color += T * background;
  out.depth = weighted_depth / std::max(out.weight_sum, Real(kWeightEpsilon));
  if (double(out.weight_sum) >= kWeightEpsilon && normal_sum.norm() > Real(0))
    out.normal = normal_sum.normalized();
  return out;
}

template <typename Real>
PreparedView<Real> prepare_view(const Scene<Real>& scene, const Camera& camera,
                                const RasterOptions& options) {
  PreparedView<Real> view;
  view.camera = &camera;
  view.options = options;
  view.splats.reserve(scene.size());
  view.normals.reserve(scene.size());
  const Mat3<Real> r_t = camera.rotation().transpose().cast<Real>();
  for (const auto& prim : scene.primitives) {
    view.splats.push_back(project_splat(prim, camera, options.cutoff_sigma));
    const auto& s = view.splats.back();
    if (s.degenerate) ++view.degenerate;
    // Orient toward the camera so opposite-facing splats do not cancel.
    Vec3<Real> n = s.tw;
    if (n.dot(s.center) > Real(0)) n = -n;
    view.normals.push_back(r_t * n);
  }
  view.bins = bin_and_sort<Real>(view.splats, camera.width, camera.height, options.tile_size);
  return view;
}

template <typename Real>
Real gather_fragments(const PreparedView<Real>& view, int row, int col,
                      std::vector<Fragment<Real>>& out) {
  out.clear();
  const TileGrid& grid = view.bins.grid;
  const int tile = (row / grid.tile_size) * grid.tiles_x + col / grid.tile_size;
  const auto [begin, end] = grid.ranges[static_cast<std::size_t>(tile)];
  const Vec3<Real> ray = view.camera->pixel_ray(row, col).template cast<Real>();
  const Real cutoff_sq = Real(view.options.cutoff_sigma * view.options.cutoff_sigma);
  const bool reverse = view.options.traversal == Traversal::paper_literal;
  Real T = 1;
  for (std::uint32_t k = 0; k < end - begin; ++k) {
    const std::uint32_t idx = reverse ? end - 1 - k : begin + k;
    const std::uint32_t prim = view.bins.primitives[idx];
    const ProjectedSplat<Real>& s = view.splats[prim];
    if (!s.bounds.contains(row, col)) continue;
    Fragment<Real> f;
    if (!intersect_plane(s, ray, f.u, f.v, f.z) || f.u * f.u + f.v * f.v > cutoff_sq) continue;
    f.primitive = prim;
    f.G = eval_gaussian(f.u, f.v);
    f.alpha = s.opacity * f.G;
    if (double(f.alpha) > kMaxAlpha) {
      f.alpha = Real(kMaxAlpha);
      f.clamped = true;
    }
    f.T = T;
    f.w = f.alpha * T;
    out.push_back(f);
    T *= Real(1) - f.alpha;
    if (double(T) < kMinTransmittance) break;
  }
  return T;
}

template <typename Real>
RenderOutput<Real> render_view(const Scene<Real>& scene, const Camera& camera,
                               const RasterOptions& options, RenderTargets<Real> targets) {
  const PreparedView<Real> view = prepare_view(scene, camera, options);
  const int h = camera.height, w = camera.width, d = scene.feature_dim;
  RenderOutput<Real> out;
  if (targets.color) out.color = Image<Real>(h, w, 3);
  if (targets.depth) out.depth = Image<Real>(h, w, 1);
  if (targets.normal) out.normal = Image<Real>(h, w, 3);
  if (targets.feature) out.feature = Image<Real>(h, w, d);
  if (targets.weight) out.weight = Image<Real>(h, w, 1);
  const Vec3<Real> background = options.background.cast<Real>();

  std::vector<std::size_t> chunk_fragments(static_cast<std::size_t>(view.chunk_count()), 0);
  parallel_for(static_cast<std::size_t>(view.chunk_count()), resolve_threads(options.threads),
               [&](std::size_t chunk) {
                 std::vector<Fragment<Real>> frags;
                 std::vector<Vec3<Real>> colors, normals;
                 for_each_pixel_in_chunk(view, static_cast<int>(chunk), [&](int row, int col) {
                   gather_fragments(view, row, col, frags);
                   chunk_fragments[chunk] += frags.size();
                   colors.clear();
                   normals.clear();
                   for (const auto& f : frags) {
                     colors.push_back(scene.primitives[f.primitive].color);
                     normals.push_back(view.normals[f.primitive]);
                   }
                   const PixelComposite<Real> px = composite_pixel<Real>(
                       frags, colors, targets.normal ? std::span<const Vec3<Real>>(normals)
                                                     : std::span<const Vec3<Real>>(),
                       background);
                   if (targets.color)
                     for (int c = 0; c < 3; ++c) out.color.at(row, col, c) = px.color[c];
                   if (targets.depth) out.depth.at(row, col) = px.depth;
                   if (targets.normal)
                     for (int c = 0; c < 3; ++c) out.normal.at(row, col, c) = px.normal[c];
                   if (targets.weight) out.weight.at(row, col) = px.weight_sum;
                   if (targets.feature) {
                     Real* dst = out.feature.pixel(row, col);
                     for (std::size_t i = 0; i < px.used; ++i) {
                       const auto& f = scene.primitives[frags[i].primitive].feature;
                       for (int c = 0; c < d; ++c) dst[c] += frags[i].w * f[c];
                     }
                   }
                 });
               });
  out.stats.instances = view.bins.keys.size();
  out.stats.degenerate = view.degenerate;
  for (auto n : chunk_fragments) out.stats.fragments += n;
  return out;
}

template <typename Real>
Image<Real> render(const Scene<Real>& scene, const Camera& camera, RenderMode mode,
                   const RasterOptions& options) {
  RenderTargets<Real> t;
  t.color = mode == RenderMode::rgb;
  t.depth = mode == RenderMode::depth;
  t.normal = mode == RenderMode::normal;
  t.feature = mode == RenderMode::feature;
  t.weight = mode == RenderMode::weight;
  RenderOutput<Real> out = render_view(scene, camera, options, t);
  switch (mode) {
    case RenderMode::rgb: return std::move(out.color);
    case RenderMode::depth: return std::move(out.depth);
    case RenderMode::normal: return std::move(out.normal);
    case RenderMode::feature: return std::move(out.feature);
    case RenderMode::weight: return std::move(out.weight);
  }
  throw UsageError("unknown render mode");
}

#define FHGS_INSTANTIATE(Real)                                                                    \
  template BinnedInstances bin_and_sort(std::span<const ProjectedSplat<Real>>, int, int, int);    \
  template PixelComposite<Real> composite_pixel(std::span<Fragment<Real>>,                        \
                                                std::span<const Vec3<Real>>,                      \
                                                std::span<const Vec3<Real>>, const Vec3<Real>&);  \
  template PreparedView<Real> prepare_view(const Scene<Real>&, const Camera&,                     \
                                           const RasterOptions&);                                 \
  template Real gather_fragments(const PreparedView<Real>&, int, int,                             \
                                 std::vector<Fragment<Real>>&);                                   \
  template RenderOutput<Real> render_view(const Scene<Real>&, const Camera&,                      \
                                          const RasterOptions&, RenderTargets<Real>);             \
  template Image<Real> render(const Scene<Real>&, const Camera&, RenderMode, const RasterOptions&);

FHGS_INSTANTIATE(float)
FHGS_INSTANTIATE(double)
#undef FHGS_INSTANTIATE

}  // namespace fhgs
