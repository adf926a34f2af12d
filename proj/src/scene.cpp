#include "fhgs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace fhgs {

ParamGroup param_group(int index) {
  if (index < 3) return ParamGroup::position;
  if (index < 7) return ParamGroup::rotation;
  if (index < 9) return ParamGroup::scale;
  if (index < 10) return ParamGroup::opacity;
  return ParamGroup::color;
}

const char* param_name(int index) {
  static constexpr const char* kNames[kNumParams] = {"p.x", "p.y", "p.z", "q.w", "q.x", "q.y", "q.z",
                                                     "s_log.u", "s_log.v", "opacity_logit", "c.r",
                                                     "c.g", "c.b"};
  return (index >= 0 && index < kNumParams) ? kNames[index] : "?";
}

template <typename Real>
Real Primitive<Real>::opacity() const {
  return Real(1) / (Real(1) + std::exp(-opacity_logit));
}

template <typename Real>
Vec2<Real> Primitive<Real>::scale() const {
  return log_scale.array().exp().matrix();
}

template <typename Real>
Real& Primitive<Real>::param(int index) {
  if (index < 3) return position[index];
  if (index < 7) return rotation[index - 3];
  if (index < 9) return log_scale[index - 7];
  if (index == 9) return opacity_logit;
  return color[index - 10];
}

template <typename Real>
Real Primitive<Real>::param(int index) const {
  return const_cast<Primitive<Real>*>(this)->param(index);
}

template <typename Real>
TangentFrame<Real> decode_frame(const Vec4<Real>& q) {
  if (!q.allFinite()) throw InvalidParameter("decode_frame: non-finite quaternion");
  const Real norm = q.norm();
  if (!(norm > Real(0))) throw InvalidParameter("decode_frame: zero quaternion");
  const Vec4<Real> n = q / norm;
  const Real w = n[0], x = n[1], y = n[2], z = n[3];
  TangentFrame<Real> f;
  f.tu = {1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)};
  f.tv = {2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)};
  f.tw = {2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)};
  return f;
}

std::optional<Eigen::Vector2d> Camera::project(const Eigen::Vector3d& world, double near) const {
  const Eigen::Vector3d c = to_camera(world);
  if (!(c.z() > near)) return std::nullopt;
  return Eigen::Vector2d(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy);
}

Camera look_at(int id, int width, int height, double fx, double fy, const Eigen::Vector3d& eye,
               const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Camera cam;
  cam.id = id;
  cam.width = width;
  cam.height = height;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.world_to_camera.setIdentity();
  cam.world_to_camera.topLeftCorner<3, 3>() = r;
  cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
  return cam;
}

int SceneInit::find_view(int view_id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (cameras[i].id == view_id) return static_cast<int>(i);
  return -1;
}

namespace {

void check_camera(const Camera& cam, std::vector<Violation>& out) {
  const Eigen::Matrix3d r = cam.rotation();
  const std::string id = "camera " + std::to_string(cam.id);
  if (!cam.world_to_camera.allFinite()) {
    out.push_back({"non-orthonormal rotation", id + ": non-finite world_to_camera"});
    return;
  }
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  if (ortho > 1e-6) {
    out.push_back({"non-orthonormal rotation", id + ": |R^T R - I| = " + std::to_string(ortho)});
  } else if (std::abs(det - 1.0) > 1e-6) {
    out.push_back({"improper rotation", id + ": det(R) = " + std::to_string(det)});
  }
  const bool intrinsics_ok = cam.width > 0 && cam.height > 0 && cam.fx > 0 && cam.fy > 0 &&
                             cam.cx >= 0 && cam.cx < cam.width && cam.cy >= 0 &&
                             cam.cy < cam.height;
  if (!intrinsics_ok) out.push_back({"invalid intrinsics", id});
}

}  // namespace

std::vector<Violation> validate_scene(const SceneInit& init) {
  std::vector<Violation> out;
  for (const auto& cam : init.cameras) check_camera(cam, out);

  if (init.images.size() != init.cameras.size() || init.features.size() != init.cameras.size()) {
    out.push_back({"view mismatch", "cameras/images/features counts differ"});
  }
  const int d = init.feature_dim();
  const std::size_t views = std::min({init.cameras.size(), init.images.size(), init.features.size()});
  for (std::size_t v = 0; v < views; ++v) {
    const Camera& cam = init.cameras[v];
    const FeatureMap& fm = init.features[v];
    if (fm.view_id != cam.id) {
      out.push_back({"view mismatch", "feature map " + std::to_string(fm.view_id) +
                                          " aligned with camera " + std::to_string(cam.id)});
    }
    if (!init.images[v].same_shape(cam.height, cam.width, 3)) {
      out.push_back({"image size mismatch", "image of view " + std::to_string(cam.id)});
    }
    if (fm.height() != cam.height || fm.width() != cam.width) {
      out.push_back({"image size mismatch", "feature map of view " + std::to_string(cam.id)});
    }
    if (fm.channels() != d) {
      out.push_back({"feature dimension mismatch",
                     "view " + std::to_string(cam.id) + " has " + std::to_string(fm.channels())});
      continue;
    }
    std::size_t bad = 0;
    for (std::size_t p = 0; p < fm.grid.pixel_count(); ++p) {
      const float* f = fm.grid.data.data() + p * d;
      double sq = 0;
      for (int c = 0; c < d; ++c) sq += double(f[c]) * f[c];
      if (!(std::abs(std::sqrt(sq) - 1.0) <= 1e-5)) ++bad;
    }
    if (bad > 0) {
      out.push_back({"non-unit feature", "view " + std::to_string(cam.id) + ": " +
                                             std::to_string(bad) + " pixel(s)"});
    }
  }
  for (const auto& pt : init.points) {
    if (!pt.position.allFinite()) {
      out.push_back({"non-finite point", "point " + std::to_string(pt.id)});
    }
  }
  return out;
}

std::size_t renormalize_features(SceneInit& init, double tolerance) {
  std::size_t changed = 0;
  for (auto& fm : init.features) {
    const int d = fm.channels();
    for (std::size_t p = 0; p < fm.grid.pixel_count(); ++p) {
      float* f = fm.grid.data.data() + p * d;
      double sq = 0;
      for (int c = 0; c < d; ++c) sq += double(f[c]) * f[c];
      const double n = std::sqrt(sq);
      if (std::abs(n - 1.0) <= tolerance) continue;
      ++changed;
      if (n > 0) {
        for (int c = 0; c < d; ++c) f[c] = static_cast<float>(f[c] / n);
      }
    }
  }
  return changed;
}

template <typename Real>
std::vector<Violation> validate_primitives(const Scene<Real>& scene) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& p = scene.primitives[i];
    const std::string id = "primitive " + std::to_string(i);
    bool finite = p.position.allFinite() && p.rotation.allFinite() && p.log_scale.allFinite() &&
                  std::isfinite(p.opacity_logit) && p.color.allFinite();
    if (!finite) out.push_back({"non-finite parameter", id});
    if (static_cast<int>(p.feature.size()) != scene.feature_dim) {
      out.push_back({"feature dimension mismatch", id});
      continue;
    }
    double sq = 0;
    for (Real v : p.feature) sq += double(v) * v;
    if (!(std::abs(std::sqrt(sq) - 1.0) <= 1e-6)) out.push_back({"non-unit feature", id});
  }
  return out;
}

template <typename Real>
std::uint64_t feature_checksum(const Scene<Real>& scene) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : scene.primitives) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.feature.data());
    for (std::size_t i = 0; i < p.feature.size() * sizeof(Real); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

template struct Primitive<float>;
template struct Primitive<double>;
template TangentFrame<float> decode_frame(const Vec4<float>&);
template TangentFrame<double> decode_frame(const Vec4<double>&);
template std::vector<Violation> validate_primitives(const Scene<float>&);
template std::vector<Violation> validate_primitives(const Scene<double>&);
template std::uint64_t feature_checksum(const Scene<float>&);
template std::uint64_t feature_checksum(const Scene<double>&);

}  // namespace fhgs
