#pragma once

#include "fhgs/scene.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fhgs {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Single-file formats. Every reader throws LoadError naming the file.

/// Binary P6 PPM, maxval <= 255. Values map to [0, 1] by v / maxval.
Image<float> read_ppm(const fs::path& path);
/// Writes 8-bit P6; each value is clamped to [0, 1] and rounded to v * 255.
void write_ppm(const fs::path& path, const Image<float>& image);

inline constexpr std::uint32_t kFmapVersion = 1;
inline constexpr std::size_t kFmapHeaderBytes = 20;

/// "FMAP", version u32, height u32, width u32, channels u32, then H*W*C
/// little-endian f32, row-major, channel-last.
Image<float> read_fmap(const fs::path& path);
void write_fmap(const fs::path& path, const Image<float>& grid);

/// JSON array of {id, width, height, fx, fy, cx, cy, world_to_camera[16]}.
/// Unknown keys are reported into `warnings` (when given) and otherwise ignored.
std::vector<Camera> read_cameras(const fs::path& path, std::vector<std::string>* warnings = nullptr);
void write_cameras(const fs::path& path, const std::vector<Camera>& cameras);

/// One `id x y z r g b` line per point, r g b in 0..255. Blank lines and
/// lines starting with '#' are skipped.
std::vector<ScenePoint> read_points(const fs::path& path);
void write_points(const fs::path& path, const std::vector<ScenePoint>& points);

// ---------------------------------------------------------------------------
// Dataset directory: cameras.json, images/<id>.ppm, features/<id>.fmap, points.txt.

struct LoadReport {
  /// Feature pixels rescaled to unit length on load.
  std::size_t renormalized = 0;
  std::vector<std::string> warnings;
};

/// Loads and validates a dataset; views are ordered by ascending id.
SceneInit load_dataset(const fs::path& dir, LoadReport* report = nullptr);
void save_dataset(const fs::path& dir, const SceneInit& data);

// ---------------------------------------------------------------------------
// Initialization.

/// Pixel a world point lands on in a camera: nearest pixel center to its
/// projection, if in front of the camera and in bounds.
std::optional<Observation> observe(const Camera& camera, const Eigen::Vector3d& world);

struct IndexResult {
  CorrespondenceIndex index;
  /// Points that land in no view.
  std::size_t excluded = 0;
};

/// Every in-bounds, positive-depth projection of every point. No occlusion test.
IndexResult build_index(const std::vector<ScenePoint>& points, const std::vector<Camera>& cameras);

/// For each indexed point, the unit feature read at its projection in one
/// uniformly drawn view. Deterministic for a fixed seed.
std::map<std::int64_t, std::vector<float>> fuse_point_features(const std::vector<ScenePoint>& points,
                                                               const CorrespondenceIndex& index,
                                                               const SceneInit& data,
                                                               std::uint64_t seed);

struct InitConfig {
  double opacity = 0.1;
  std::uint64_t seed = 0;
};

struct InitReport {
  std::size_t excluded = 0;
  std::size_t primitives = 0;
};

/// One primitive per indexed point: position and color from the point, a
/// random rotation, isotropic scale from the RMS distance to the three nearest
/// neighbours, the configured opacity and the fused frozen feature.
Scene<float> initialize_scene(const SceneInit& data, const InitConfig& config,
                              InitReport* report = nullptr);

// ---------------------------------------------------------------------------
// Synthetic scenes: spheres resting on an optional ground plane, viewed by a
// ring of cameras looking down at them.

struct SynthSpec {
  int objects = 2;
  int feature_dim = 16;
  int views = 12;
  int width = 128;
  int height = 128;
  std::uint64_t seed = 0;
  bool ground_plane = true;
  int points_per_object = 300;
  int ground_points = 700;
  double sphere_radius = 0.5;
  /// Per-object colors; objects past the end use the built-in palette.
  std::vector<Eigen::Vector3d> colors;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  /// Supersampling factor per axis for the ground-truth images.
  int supersample = 3;

  void validate() const;
};

struct SynthScene {
  SceneInit data;
  /// Unit feature of each object in order, then the ground (if any), then the background.
  std::vector<std::vector<float>> canonical_features;
  std::vector<Eigen::Vector3d> object_colors;
};

SynthScene synth_scene(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Checkpoints: "FHGS", version u32, count u32, feature dim u32, then per
// primitive p(3) q(4) s_log(2) opacity_logit(1) c(3) f(d), all f32 little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Scene<float>& scene, const fs::path& path);
Scene<float> load_checkpoint(const fs::path& path);

}  // namespace fhgs
