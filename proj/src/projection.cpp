#include "fhgs/projection.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fhgs {

template <typename Real>
SplatTransform<Real> build_transform(const Primitive<Real>& prim) {
  const TangentFrame<Real> frame = decode_frame(prim.rotation);
  const Vec2<Real> s = prim.scale();
  SplatTransform<Real> t;
  t.matrix.setZero();
  t.matrix.template block<3, 1>(0, 0) = s[0] * frame.tu;
  t.matrix.template block<3, 1>(0, 1) = s[1] * frame.tv;
  t.matrix.template block<3, 1>(0, 3) = prim.position;
  t.matrix(3, 3) = 1;
  return t;
}

namespace {

std::optional<PixelRect> bounds_in_camera(const Eigen::Vector3d& center, const Eigen::Vector3d& du,
                                          const Eigen::Vector3d& dv, const Camera& camera) {
  std::array<Eigen::Vector3d, 4> corners = {center + du + dv, center + du - dv, center - du + dv,
                                            center - du - dv};
  int behind = 0;
  for (const auto& c : corners)
    if (!(c.z() > kNearPlane)) ++behind;
  if (behind == 4) return std::nullopt;

  PixelRect rect{0, camera.height - 1, 0, camera.width - 1};
  if (behind == 0) {
    // The disk lies inside the corner rectangle, whose projection is the
    // convex hull of the projected corners.
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& c : corners) {
      const double x = camera.fx * c.x() / c.z() + camera.cx;
      const double y = camera.fy * c.y() / c.z() + camera.cy;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
    if (!std::isfinite(xmin) || !std::isfinite(xmax) || !std::isfinite(ymin) ||
        !std::isfinite(ymax))
      return rect;
    // One pixel of slack absorbs single-precision intersection round-off.
    const double lo_x = std::max(std::floor(xmin) - 1.0, -1.0);
    const double hi_x = std::min(std::ceil(xmax) + 1.0, double(camera.width));
    const double lo_y = std::max(std::floor(ymin) - 1.0, -1.0);
    const double hi_y = std::min(std::ceil(ymax) + 1.0, double(camera.height));
    rect.col_min = std::max(0, static_cast<int>(lo_x));
    rect.col_max = std::min(camera.width - 1, static_cast<int>(hi_x));
    rect.row_min = std::max(0, static_cast<int>(lo_y));
    rect.row_max = std::min(camera.height - 1, static_cast<int>(hi_y));
  }
  if (rect.empty()) return std::nullopt;
  return rect;
}

}  // namespace

template <typename Real>
ProjectedSplat<Real> project_splat(const Primitive<Real>& prim, const Camera& camera,
                                   double cutoff_sigma) {
  const TangentFrame<Real> frame = decode_frame(prim.rotation);
  const Mat3<Real> r = camera.rotation().cast<Real>();
  const Vec3<Real> t = camera.translation().cast<Real>();
  ProjectedSplat<Real> out;
  out.center = r * prim.position + t;
  out.tu = r * frame.tu;
  out.tv = r * frame.tv;
  out.tw = r * frame.tw;
  const Vec2<Real> s = prim.scale();
  out.su = s[0];
  out.sv = s[1];
  out.opacity = prim.opacity();
  out.degenerate = !(double(out.su) >= kDegenerateScale && double(out.sv) >= kDegenerateScale);
  if (out.degenerate) {
    out.bounds = PixelRect{};
    return out;
  }
  const Eigen::Vector3d c = out.center.template cast<double>();
  const Eigen::Vector3d du = cutoff_sigma * double(out.su) * out.tu.template cast<double>();
  const Eigen::Vector3d dv = cutoff_sigma * double(out.sv) * out.tv.template cast<double>();
  out.bounds = bounds_in_camera(c, du, dv, camera).value_or(PixelRect{});
  return out;
}

template <typename Real>
std::optional<Intersection<Real>> intersect(const ProjectedSplat<Real>& splat, const Vec3<Real>& ray) {
  Intersection<Real> hit;
  if (!intersect_plane(splat, ray, hit.u, hit.v, hit.z)) return std::nullopt;
  hit.G = eval_gaussian(hit.u, hit.v);
  return hit;
}

template <typename Real>
std::optional<Intersection<Real>> intersect(const Camera& camera, int row, int col,
                                            const Primitive<Real>& prim) {
  const ProjectedSplat<Real> splat = project_splat(prim, camera);
  return intersect(splat, Vec3<Real>(camera.pixel_ray(row, col).cast<Real>()));
}

template <typename Real>
std::optional<PixelRect> screen_bounds(const Primitive<Real>& prim, const Camera& camera,
                                       double cutoff_sigma) {
  const ProjectedSplat<Real> splat = project_splat(prim, camera, cutoff_sigma);
  if (splat.bounds.empty()) return std::nullopt;
  return splat.bounds;
}

#define FHGS_INSTANTIATE(Real)                                                                   \
  template SplatTransform<Real> build_transform(const Primitive<Real>&);                         \
  template ProjectedSplat<Real> project_splat(const Primitive<Real>&, const Camera&, double);    \
  template std::optional<Intersection<Real>> intersect(const ProjectedSplat<Real>&,              \
                                                       const Vec3<Real>&);                       \
  template std::optional<Intersection<Real>> intersect(const Camera&, int, int,                  \
                                                       const Primitive<Real>&);                  \
  template std::optional<PixelRect> screen_bounds(const Primitive<Real>&, const Camera&, double);

FHGS_INSTANTIATE(float)
FHGS_INSTANTIATE(double)
#undef FHGS_INSTANTIATE

}  // namespace fhgs
