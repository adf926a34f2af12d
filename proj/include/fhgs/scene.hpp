#pragma once

#include "fhgs/common.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fhgs {

/// Number of differentiable scalars per primitive: position(3), rotation(4),
/// log-scale(2), opacity logit(1), color(3). The feature is not among them.
inline constexpr int kNumParams = 13;

enum class ParamGroup { position, rotation, scale, opacity, color };

ParamGroup param_group(int index);
const char* param_name(int index);

/// One planar gaussian. Rotation is a quaternion (w, x, y, z) whose decoded
/// columns are the tangent frame (t_u, t_v, t_w). Scales live in log space and
/// opacity as a logit so that any unconstrained update keeps them valid.
template <typename Real>
struct Primitive {
  Vec3<Real> position = Vec3<Real>::Zero();
  Vec4<Real> rotation = Vec4<Real>(1, 0, 0, 0);
  Vec2<Real> log_scale = Vec2<Real>::Zero();
  Real opacity_logit = 0;
  Vec3<Real> color = Vec3<Real>::Zero();
  /// Unit-norm semantic feature. Never written after initialization.
  std::vector<Real> feature;

  Real opacity() const;
  Vec2<Real> scale() const;

  Real& param(int index);
  Real param(int index) const;

  template <typename Other>
  Primitive<Other> cast() const {
    Primitive<Other> out;
    out.position = position.template cast<Other>();
    out.rotation = rotation.template cast<Other>();
    out.log_scale = log_scale.template cast<Other>();
    out.opacity_logit = static_cast<Other>(opacity_logit);
    out.color = color.template cast<Other>();
    out.feature.assign(feature.begin(), feature.end());
    return out;
  }
};

template <typename Real>
struct Scene {
  int feature_dim = 0;
  std::vector<Primitive<Real>> primitives;

  std::size_t size() const { return primitives.size(); }
  bool empty() const { return primitives.empty(); }

  template <typename Other>
  Scene<Other> cast() const {
    Scene<Other> out;
    out.feature_dim = feature_dim;
    out.primitives.reserve(primitives.size());
    for (const auto& p : primitives) out.primitives.push_back(p.template cast<Other>());
    return out;
  }
};

template <typename Real>
struct TangentFrame {
  Vec3<Real> tu;
  Vec3<Real> tv;
  Vec3<Real> tw;

  Mat3<Real> matrix() const {
    Mat3<Real> m;
    m.col(0) = tu;
    m.col(1) = tv;
    m.col(2) = tw;
    return m;
  }
};

/// Rotation matrix columns of a (possibly unnormalized) quaternion.
/// Throws InvalidParameter for a non-finite or zero quaternion.
template <typename Real>
TangentFrame<Real> decode_frame(const Vec4<Real>& q);

/// Pinhole camera. Pixel (row, col) has its center at image coordinates
/// (x, y) = (col, row); the principal point is (cx, cy) in the same frame.
struct Camera {
  int id = 0;
  int width = 0;
  int height = 0;
  double fx = 1;
  double fy = 1;
  double cx = 0;
  double cy = 0;
  Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();

  Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

  /// Camera-frame direction through a pixel center, scaled to unit depth.
  Eigen::Vector3d pixel_ray(int row, int col) const {
    return {(col - cx) / fx, (row - cy) / fy, 1.0};
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation() * world + translation();
  }

  /// Continuous image coordinates (x, y) of a world point, if in front of the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& world, double near = 1e-4) const;
};

/// Builds a camera at `eye` looking at `target` (OpenCV axes: x right, y down, z forward).
Camera look_at(int id, int width, int height, double fx, double fy, const Eigen::Vector3d& eye,
               const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Row-major H x W x C grid.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int row, int col, int ch = 0) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  T& at(int row, int col, int ch = 0) { return data[index(row, col, ch)]; }
  const T& at(int row, int col, int ch = 0) const { return data[index(row, col, ch)]; }
  T* pixel(int row, int col) { return data.data() + index(row, col); }
  const T* pixel(int row, int col) const { return data.data() + index(row, col); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(int h, int w, int c) const { return height == h && width == w && channels == c; }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out(height, width, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

/// Ground-truth per-pixel features of one view.
struct FeatureMap {
  int view_id = 0;
  Image<float> grid;

  int channels() const { return grid.channels; }
  int height() const { return grid.height; }
  int width() const { return grid.width; }
  const float* at(int row, int col) const { return grid.pixel(row, col); }
};

struct Observation {
  int view_id = 0;
  int row = 0;
  int col = 0;

  friend bool operator==(const Observation&, const Observation&) = default;
  friend auto operator<=>(const Observation&, const Observation&) = default;
};

/// point_id -> every (view, pixel) where the point projects in bounds.
using CorrespondenceIndex = std::map<std::int64_t, std::vector<Observation>>;

struct ScenePoint {
  std::int64_t id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  /// Linear RGB in [0, 1].
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Everything a training run consumes. Views are aligned by position:
/// cameras[i], images[i] and features[i] describe the same view id.
struct SceneInit {
  std::vector<ScenePoint> points;
  std::vector<Camera> cameras;
  std::vector<Image<float>> images;
  std::vector<FeatureMap> features;

  int feature_dim() const { return features.empty() ? 0 : features.front().channels(); }
  std::size_t view_count() const { return cameras.size(); }
  /// Position of a view id, or -1.
  int find_view(int view_id) const;
};

struct Violation {
  std::string kind;
  std::string detail;
};

/// Checks every SceneInit invariant; reports instead of throwing. Kinds:
/// "non-unit feature", "improper rotation", "non-orthonormal rotation",
/// "invalid intrinsics", "feature dimension mismatch", "non-finite point",
/// "view mismatch", "image size mismatch".
std::vector<Violation> validate_scene(const SceneInit& init);

/// Rescales every ground-truth feature to unit length; returns how many pixels changed.
std::size_t renormalize_features(SceneInit& init, double tolerance = 1e-5);

template <typename Real>
std::vector<Violation> validate_primitives(const Scene<Real>& scene);

/// FNV-1a over the raw bytes of every feature vector, in primitive order.
template <typename Real>
std::uint64_t feature_checksum(const Scene<Real>& scene);

}  // namespace fhgs
