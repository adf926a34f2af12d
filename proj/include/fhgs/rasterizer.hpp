#pragma once

#include "fhgs/parallel.hpp"
#include "fhgs/projection.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace fhgs {

/// Compositing order. `standard` blends nearest first (nearest occludes);
/// `paper_literal` blends farthest first, reproducing the literal index
/// convention where i = 1 is the farthest primitive.
enum class Traversal { standard, paper_literal };

enum class RenderMode { rgb, depth, normal, feature, weight };

Traversal parse_traversal(std::string_view name);
const char* to_string(Traversal t);
RenderMode parse_render_mode(std::string_view name);
const char* to_string(RenderMode m);

inline constexpr double kMaxAlpha = 1.0 - 1e-4;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kWeightEpsilon = 1e-8;

struct RasterOptions {
  int tile_size = 16;
  Traversal traversal = Traversal::standard;
  double cutoff_sigma = kDefaultCutoffSigma;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  /// 0 = resolve from FHGS_THREADS / hardware.
  int threads = 0;
};

/// Order-preserving map from a float depth to an unsigned key (valid for all finite z).
std::uint32_t depth_key(float z);

/// Tile index in the upper 32 bits, depth key in the lower 32.
inline std::uint64_t instance_key(std::uint32_t tile, float depth) {
  return (static_cast<std::uint64_t>(tile) << 32) | depth_key(depth);
}

struct TileGrid {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  /// Half-open [begin, end) ranges into the sorted instance list, one per tile.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges;

  int tile_count() const { return tiles_x * tiles_y; }
};

struct BinnedInstances {
  TileGrid grid;
  std::vector<std::uint64_t> keys;
  std::vector<std::uint32_t> primitives;
};

/// Stable LSD radix sort of (key, value) pairs by key, 8 bits per pass.
/// Passes whose digit is constant across all keys are skipped.
void radix_sort_pairs(std::vector<std::uint64_t>& keys, std::vector<std::uint32_t>& values);

/// Duplicates each splat into every tile its bounds overlap and sorts the
/// instances by (tile, depth); equal keys keep ascending primitive order.
template <typename Real>
BinnedInstances bin_and_sort(std::span<const ProjectedSplat<Real>> splats, int width, int height,
                             int tile_size);

/// Per-(pixel, primitive) blend record.
template <typename Real>
struct Fragment {
  std::uint32_t primitive = 0;
  Real u = 0;
  Real v = 0;
  Real z = 0;
  Real G = 0;
  Real alpha = 0;
  /// Transmittance before this fragment.
  Real T = 1;
  Real w = 0;
  Real phi = 0;
  Real sigma = 0;
  bool clamped = false;
};

template <typename Real>
struct PixelComposite {
  Vec3<Real> color = Vec3<Real>::Zero();
  Real depth = 0;
  Vec3<Real> normal = Vec3<Real>::Zero();
  Real weight_sum = 0;
  Real transmittance = 1;
  /// Fragments blended before early termination.
  std::size_t used = 0;
};

/// Front-to-back blend of fragments given in compositing order with alpha set.
/// Writes T and w into each fragment; stops once T < 1e-4.
template <typename Real>
PixelComposite<Real> composite_pixel(std::span<Fragment<Real>> fragments,
                                     std::span<const Vec3<Real>> colors,
                                     std::span<const Vec3<Real>> normals,
                                     const Vec3<Real>& background = Vec3<Real>::Zero());

struct RenderStats {
  std::size_t instances = 0;
  std::size_t fragments = 0;
  std::size_t degenerate = 0;
};

/// Per-view cache shared by forward, loss and backward traversals.
template <typename Real>
struct PreparedView {
  const Camera* camera = nullptr;
  RasterOptions options;
  std::vector<ProjectedSplat<Real>> splats;
  /// Camera-facing world-space normal of each splat.
  std::vector<Vec3<Real>> normals;
  BinnedInstances bins;
  std::size_t degenerate = 0;

  /// Work partition: one chunk per row of tiles. Fixed regardless of thread
  /// count so per-chunk partial sums reduce identically.
  int chunk_count() const { return bins.grid.tiles_y; }
};

template <typename Real>
PreparedView<Real> prepare_view(const Scene<Real>& scene, const Camera& camera,
                                const RasterOptions& options);

/// Collects the fragments of one pixel in compositing order with alpha, T and w
/// set, truncated at early termination. Returns the final transmittance.
template <typename Real>
Real gather_fragments(const PreparedView<Real>& view, int row, int col,
                      std::vector<Fragment<Real>>& out);

/// Calls fn(row, col) for every pixel of one chunk (a row of tiles), tile by tile.
template <typename Real, typename Fn>
void for_each_pixel_in_chunk(const PreparedView<Real>& view, int chunk, Fn&& fn) {
  const TileGrid& grid = view.bins.grid;
  const int ts = grid.tile_size;
  const int row0 = chunk * ts;
  const int row1 = std::min(row0 + ts, view.camera->height);
  for (int tx = 0; tx < grid.tiles_x; ++tx) {
    const int col0 = tx * ts;
    const int col1 = std::min(col0 + ts, view.camera->width);
    for (int row = row0; row < row1; ++row)
      for (int col = col0; col < col1; ++col) fn(row, col);
  }
}

template <typename Real>
struct RenderTargets {
  bool color = true;
  bool depth = false;
  bool normal = false;
  bool feature = false;
  bool weight = false;
};

template <typename Real>
struct RenderOutput {
  Image<Real> color;
  Image<Real> depth;
  Image<Real> normal;
  /// Unnormalized sum of w_i f_i per pixel.
  Image<Real> feature;
  Image<Real> weight;
  RenderStats stats;
};

template <typename Real>
RenderOutput<Real> render_view(const Scene<Real>& scene, const Camera& camera,
                               const RasterOptions& options, RenderTargets<Real> targets);

/// Single-mode convenience wrapper. Feature mode is for evaluation only; the
/// training loop never renders features.
template <typename Real>
Image<Real> render(const Scene<Real>& scene, const Camera& camera, RenderMode mode,
                   const RasterOptions& options = {});

}  // namespace fhgs
