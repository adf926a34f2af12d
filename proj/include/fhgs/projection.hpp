#pragma once

#include "fhgs/scene.hpp"

#include <cmath>
#include <optional>

namespace fhgs {

inline constexpr double kNearPlane = 1e-4;
/// |ray . t_w| below this is treated as a ray parallel to the splat plane.
inline constexpr double kParallelEpsilon = 1e-9;
/// Backward pass drops geometry gradients of intersections flatter than this.
inline constexpr double kGradientParallelEpsilon = 1e-6;
inline constexpr double kDegenerateScale = 1e-12;
inline constexpr double kDefaultCutoffSigma = 3.0;

/// Homogeneous local-to-world map: H (u, v, 1, 1)^T = (p + s_u t_u u + s_v t_v v, 1).
template <typename Real>
struct SplatTransform {
  Mat4<Real> matrix = Mat4<Real>::Identity();

  Vec4<Real> apply(Real u, Real v) const { return matrix * Vec4<Real>(u, v, 1, 1); }
};

template <typename Real>
SplatTransform<Real> build_transform(const Primitive<Real>& prim);

template <typename Real>
struct Intersection {
  Real u = 0;
  Real v = 0;
  /// Camera-frame depth of the hit point.
  Real z = 0;
  Real G = 0;
};

template <typename Real>
Real eval_gaussian(Real u, Real v) {
  using std::exp;
  return exp(-(u * u + v * v) / Real(2));
}

/// Inclusive pixel rectangle.
struct PixelRect {
  int row_min = 0;
  int row_max = -1;
  int col_min = 0;
  int col_max = -1;

  bool empty() const { return row_max < row_min || col_max < col_min; }
  int width() const { return empty() ? 0 : col_max - col_min + 1; }
  int height() const { return empty() ? 0 : row_max - row_min + 1; }
  bool contains(int row, int col) const {
    return row >= row_min && row <= row_max && col >= col_min && col <= col_max;
  }
};

/// A primitive expressed in one camera's frame; the per-view cache used by
/// every pixel traversal.
template <typename Real>
struct ProjectedSplat {
  Vec3<Real> center = Vec3<Real>::Zero();
  Vec3<Real> tu = Vec3<Real>::UnitX();
  Vec3<Real> tv = Vec3<Real>::UnitY();
  Vec3<Real> tw = Vec3<Real>::UnitZ();
  Real su = 1;
  Real sv = 1;
  Real opacity = 0;
  bool degenerate = false;
  /// Pixels that may receive a fragment; empty when offscreen.
  PixelRect bounds;
};

template <typename Real>
ProjectedSplat<Real> project_splat(const Primitive<Real>& prim, const Camera& camera,
                                   double cutoff_sigma = kDefaultCutoffSigma);

/// Plane-local coordinates (u, v) and depth z of a camera-frame ray's hit on
/// the splat plane, without evaluating the gaussian. False on a miss.
template <typename Real>
inline bool intersect_plane(const ProjectedSplat<Real>& splat, const Vec3<Real>& ray, Real& u, Real& v,
                            Real& z) {
  if (splat.degenerate) return false;
  const Real denom = ray.dot(splat.tw);
  if (!(std::abs(double(denom)) >= kParallelEpsilon)) return false;
  z = splat.center.dot(splat.tw) / denom;
  if (!(double(z) > kNearPlane)) return false;
  const Vec3<Real> offset = z * ray - splat.center;
  u = offset.dot(splat.tu) / splat.su;
  v = offset.dot(splat.tv) / splat.sv;
  return true;
}

/// Exact ray/splat-plane intersection for a camera-frame ray with unit z.
/// Misses on parallel rays, hits at or behind the near plane, and degenerate splats.
template <typename Real>
std::optional<Intersection<Real>> intersect(const ProjectedSplat<Real>& splat, const Vec3<Real>& ray);

template <typename Real>
std::optional<Intersection<Real>> intersect(const Camera& camera, int row, int col,
                                            const Primitive<Real>& prim);

/// Conservative pixel box of all pixels whose intersection has u^2 + v^2 <= cutoff^2,
/// clipped to the image; nullopt when the splat is entirely behind the near plane
/// or outside the image.
template <typename Real>
std::optional<PixelRect> screen_bounds(const Primitive<Real>& prim, const Camera& camera,
                                       double cutoff_sigma = kDefaultCutoffSigma);

}  // namespace fhgs
