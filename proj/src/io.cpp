#include "fhgs/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace fhgs {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw LoadError(path.string() + ": " + what);
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(path.string() + ": write failed");
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

/// Minimal token reader for the PPM header (skips whitespace and comments).
class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  std::string token() {
    skip();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      t.push_back(bytes_[pos_++]);
    if (t.empty()) fail(path_, "truncated PPM header");
    return t;
  }

  int number() {
    const std::string t = token();
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size() || v <= 0) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail(path_, "malformed PPM header value '" + t + "'");
    }
  }

  /// Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_offset() const { return pos_ + 1; }

 private:
  void skip() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

Image<float> read_ppm(const fs::path& path) {
  const std::vector<char> bytes = read_bytes(path);
  HeaderReader header(bytes, path);
  if (header.token() != "P6") fail(path, "not a binary PPM (expected magic P6)");
  const int width = header.number();
  const int height = header.number();
  const int maxval = header.number();
  if (maxval > 255) fail(path, "16-bit PPM is not supported");
  const std::size_t offset = header.raster_offset();
  const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() < offset || bytes.size() - offset != expected) {
    fail(path, "expected " + std::to_string(expected) + " raster bytes, found " +
                   std::to_string(bytes.size() < offset ? 0 : bytes.size() - offset));
  }
  Image<float> img(height, width, 3);
  for (std::size_t i = 0; i < expected; ++i)
    img.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[offset + i])) / float(maxval);
  return img;
}

void write_ppm(const fs::path& path, const Image<float>& image) {
  if (image.channels != 3) throw UsageError("write_ppm: image must have 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (float v : image.data) {
    const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  write_bytes(path, out);
}

Image<float> read_fmap(const fs::path& path) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.size() < kFmapHeaderBytes)
    fail(path, "expected at least " + std::to_string(kFmapHeaderBytes) + " header bytes, found " +
                   std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), "FMAP", 4) != 0) fail(path, "bad magic (expected FMAP)");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFmapVersion) fail(path, "unsupported FMAP version " + std::to_string(version));
  const std::uint32_t h = get_u32(bytes.data() + 8);
  const std::uint32_t w = get_u32(bytes.data() + 12);
  const std::uint32_t c = get_u32(bytes.data() + 16);
  if (h == 0 || w == 0 || c == 0) fail(path, "FMAP header has a zero dimension");
  const std::uint64_t expected = kFmapHeaderBytes + 4ull * h * w * c;
  if (bytes.size() != expected)
    fail(path, "expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  Image<float> grid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (std::size_t i = 0; i < grid.data.size(); ++i)
    grid.data[i] = get_f32(bytes.data() + kFmapHeaderBytes + 4 * i);
  return grid;
}

void write_fmap(const fs::path& path, const Image<float>& grid) {
  std::string out = "FMAP";
  out.reserve(kFmapHeaderBytes + 4 * grid.data.size());
  put_u32(out, kFmapVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.height));
  put_u32(out, static_cast<std::uint32_t>(grid.width));
  put_u32(out, static_cast<std::uint32_t>(grid.channels));
  for (float v : grid.data) put_f32(out, v);
  write_bytes(path, out);
}

std::vector<Camera> read_cameras(const fs::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(path, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_array()) fail(path, "expected a JSON array of cameras");
  static const std::set<std::string> known = {"id", "width", "height", "fx", "fy",
                                              "cx", "cy", "world_to_camera"};
  std::vector<Camera> cams;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& j = doc[i];
    const std::string where = "camera entry " + std::to_string(i);
    if (!j.is_object()) fail(path, where + " is not an object");
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key) && warnings)
        warnings->push_back(path.string() + ": " + where + ": ignoring unknown key '" + key + "'");
    }
    for (const auto& key : known)
      if (!j.contains(key)) fail(path, where + " lacks key '" + key + "'");
    try {
      Camera cam;
      cam.id = j.at("id").get<int>();
      cam.width = j.at("width").get<int>();
      cam.height = j.at("height").get<int>();
      cam.fx = j.at("fx").get<double>();
      cam.fy = j.at("fy").get<double>();
      cam.cx = j.at("cx").get<double>();
      cam.cy = j.at("cy").get<double>();
      const json& m = j.at("world_to_camera");
      if (!m.is_array() || m.size() != 16) fail(path, where + ": world_to_camera needs 16 numbers");
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[r * 4 + c].get<double>();
      cams.push_back(cam);
    } catch (const json::exception& e) {
      fail(path, where + ": " + e.what());
    }
  }
  return cams;
}

void write_cameras(const fs::path& path, const std::vector<Camera>& cameras) {
  ordered_json doc = ordered_json::array();
  for (const Camera& cam : cameras) {
    ordered_json j;
    j["id"] = cam.id;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    ordered_json m = ordered_json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m.push_back(cam.world_to_camera(r, c));
    j["world_to_camera"] = m;
    doc.push_back(j);
  }
  write_bytes(path, doc.dump(2) + "\n");
}

std::vector<ScenePoint> read_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open file");
  std::vector<ScenePoint> points;
  std::set<std::int64_t> ids;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    ScenePoint p;
    double r, g, b;
    if (!(ss >> p.id >> p.position.x() >> p.position.y() >> p.position.z() >> r >> g >> b))
      fail(path, "line " + std::to_string(lineno) + ": expected 'id x y z r g b'");
    std::string extra;
    if (ss >> extra) fail(path, "line " + std::to_string(lineno) + ": trailing data '" + extra + "'");
    if (!ids.insert(p.id).second)
      fail(path, "line " + std::to_string(lineno) + ": duplicate point id " + std::to_string(p.id));
    p.color = Eigen::Vector3d(r, g, b) / 255.0;
    points.push_back(p);
  }
  return points;
}

void write_points(const fs::path& path, const std::vector<ScenePoint>& points) {
  std::ostringstream os;
  os.precision(17);
  for (const ScenePoint& p : points) {
    os << p.id << ' ' << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z();
    for (int c = 0; c < 3; ++c) os << ' ' << std::lround(std::clamp(p.color[c], 0.0, 1.0) * 255.0);
    os << '\n';
  }
  write_bytes(path, os.str());
}

SceneInit load_dataset(const fs::path& dir, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  if (!fs::is_directory(dir)) fail(dir, "dataset directory not found");
  SceneInit data;
  data.cameras = read_cameras(dir / "cameras.json", &rep.warnings);
  std::sort(data.cameras.begin(), data.cameras.end(),
            [](const Camera& a, const Camera& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < data.cameras.size(); ++i)
    if (data.cameras[i].id == data.cameras[i - 1].id)
      fail(dir / "cameras.json", "duplicate view id " + std::to_string(data.cameras[i].id));
  for (const Camera& cam : data.cameras) {
    const std::string id = std::to_string(cam.id);
    const fs::path image_path = dir / "images" / (id + ".ppm");
    const fs::path feature_path = dir / "features" / (id + ".fmap");
    if (!fs::exists(image_path)) fail(image_path, "missing image for view " + id);
    if (!fs::exists(feature_path)) fail(feature_path, "missing feature map for view " + id);
    data.images.push_back(read_ppm(image_path));
    if (!data.images.back().same_shape(cam.height, cam.width, 3))
      fail(image_path, "image size differs from camera " + id);
    FeatureMap fm{cam.id, read_fmap(feature_path)};
    if (fm.height() != cam.height || fm.width() != cam.width)
      fail(feature_path, "feature map size differs from camera " + id);
    if (!data.features.empty() && fm.channels() != data.features.front().channels())
      fail(feature_path, "feature dimension " + std::to_string(fm.channels()) + " differs from " +
                             std::to_string(data.features.front().channels()));
    data.features.push_back(std::move(fm));
  }
  data.points = read_points(dir / "points.txt");

  rep.renormalized = renormalize_features(data);
  if (rep.renormalized > 0)
    rep.warnings.push_back(std::to_string(rep.renormalized) + " feature pixel(s) renormalized to unit length");
  const auto violations = validate_scene(data);
  if (!violations.empty()) {
    std::string msg = "invalid dataset:";
    for (const auto& v : violations) msg += " [" + v.kind + ": " + v.detail + "]";
    fail(dir, msg);
  }
  return data;
}

void save_dataset(const fs::path& dir, const SceneInit& data) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "features");
  write_cameras(dir / "cameras.json", data.cameras);
  for (std::size_t v = 0; v < data.cameras.size(); ++v) {
    const std::string id = std::to_string(data.cameras[v].id);
    write_ppm(dir / "images" / (id + ".ppm"), data.images[v]);
    write_fmap(dir / "features" / (id + ".fmap"), data.features[v].grid);
  }
  write_points(dir / "points.txt", data.points);
}

std::optional<Observation> observe(const Camera& camera, const Eigen::Vector3d& world) {
  const auto xy = camera.project(world);
  if (!xy) return std::nullopt;
  const double col = std::round(xy->x()), row = std::round(xy->y());
  if (!(col >= 0 && col < camera.width && row >= 0 && row < camera.height)) return std::nullopt;
  return Observation{camera.id, static_cast<int>(row), static_cast<int>(col)};
}

IndexResult build_index(const std::vector<ScenePoint>& points, const std::vector<Camera>& cameras) {
  IndexResult result;
  for (const ScenePoint& p : points) {
    std::vector<Observation> obs;
    for (const Camera& cam : cameras)
      if (auto o = observe(cam, p.position)) obs.push_back(*o);
    if (obs.empty()) {
      ++result.excluded;
      continue;
    }
    result.index.emplace(p.id, std::move(obs));
  }
  return result;
}

std::map<std::int64_t, std::vector<float>> fuse_point_features(const std::vector<ScenePoint>& points,
                                                               const CorrespondenceIndex& index,
                                                               const SceneInit& data,
                                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::int64_t, std::vector<float>> out;
  const int d = data.feature_dim();
  for (const ScenePoint& p : points) {
    const auto it = index.find(p.id);
    if (it == index.end()) continue;
    const auto& obs = it->second;
    std::uniform_int_distribution<std::size_t> pick(0, obs.size() - 1);
    const Observation& o = obs[pick(rng)];
    const int view = data.find_view(o.view_id);
    if (view < 0) throw UsageError("fuse_point_features: unknown view " + std::to_string(o.view_id));
    const float* src = data.features[static_cast<std::size_t>(view)].at(o.row, o.col);
    double sq = 0;
    for (int c = 0; c < d; ++c) sq += double(src[c]) * src[c];
    const double norm = std::sqrt(sq);
    if (!(norm > 0)) throw NumericalError("fuse_point_features: zero feature at point " + std::to_string(p.id));
    std::vector<float> f(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c) f[c] = static_cast<float>(src[c] / norm);
    out.emplace(p.id, std::move(f));
  }
  return out;
}

Scene<float> initialize_scene(const SceneInit& data, const InitConfig& config, InitReport* report) {
  if (!(config.opacity > 0 && config.opacity < 1))
    throw InvalidParameter("initial opacity must lie in (0, 1)");
  const IndexResult idx = build_index(data.points, data.cameras);
  const auto features = fuse_point_features(data.points, idx.index, data, config.seed);

  std::vector<const ScenePoint*> kept;
  for (const ScenePoint& p : data.points)
    if (features.contains(p.id)) kept.push_back(&p);

  // Brute-force three nearest neighbours.
  const std::size_t n = kept.size();
  std::vector<double> knn_scale(n, 0.01);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 3> best = {INFINITY, INFINITY, INFINITY};
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d2 = (kept[i]->position - kept[j]->position).squaredNorm();
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double sum = 0;
    int count = 0;
    for (double b : best)
      if (std::isfinite(b)) {
        sum += b;
        ++count;
      }
    if (count > 0 && sum > 0) knn_scale[i] = std::sqrt(sum / count);
  }

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> normal;
  Scene<float> scene;
  scene.feature_dim = data.feature_dim();
  scene.primitives.reserve(n);
  const float logit = static_cast<float>(std::log(config.opacity / (1 - config.opacity)));
  for (std::size_t i = 0; i < n; ++i) {
    Primitive<float> prim;
    prim.position = kept[i]->position.cast<float>();
    Eigen::Vector4d q;
    do {
      q = Eigen::Vector4d(normal(rng), normal(rng), normal(rng), normal(rng));
    } while (q.norm() < 1e-6);
    prim.rotation = (q / q.norm()).cast<float>();
    const float ls = static_cast<float>(std::log(knn_scale[i]));
    prim.log_scale = Vec2<float>(ls, ls);
    prim.opacity_logit = logit;
    prim.color = kept[i]->color.cast<float>();
    prim.feature = features.at(kept[i]->id);
    scene.primitives.push_back(std::move(prim));
  }
  if (report) {
    report->excluded = idx.excluded;
    report->primitives = n;
  }
  return scene;
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (objects < 2) throw UsageError("synthetic scene needs at least 2 objects");
  if (views < 3) throw UsageError("synthetic scene needs at least 3 views");
  if (feature_dim < 2) throw UsageError("feature dimension must be at least 2");
  if (width < 8 || height < 8) throw UsageError("image size must be at least 8x8");
  if (points_per_object < 1) throw UsageError("points per object must be positive");
  if (ground_plane && ground_points < 1) throw UsageError("ground points must be positive");
  if (!(sphere_radius > 0)) throw UsageError("sphere radius must be positive");
  if (supersample < 1) throw UsageError("supersample factor must be positive");
}

namespace {

const std::array<Eigen::Vector3d, 8> kPalette = {
    Eigen::Vector3d(0.90, 0.15, 0.10), Eigen::Vector3d(0.15, 0.65, 0.25),
    Eigen::Vector3d(0.15, 0.30, 0.90), Eigen::Vector3d(0.95, 0.80, 0.15),
    Eigen::Vector3d(0.70, 0.20, 0.80), Eigen::Vector3d(0.10, 0.75, 0.80),
    Eigen::Vector3d(0.95, 0.55, 0.20), Eigen::Vector3d(0.55, 0.35, 0.20)};
const Eigen::Vector3d kGroundColor(0.55, 0.52, 0.48);

/// Unit vectors with pairwise cosine below `max_cos`, by rejection.
std::vector<std::vector<float>> separated_features(int count, int d, double max_cos, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> chosen;
  for (int attempts = 0; static_cast<int>(chosen.size()) < count; ++attempts) {
    if (attempts > 200000)
      throw InvalidParameter("cannot draw " + std::to_string(count) + " separated features in dimension " +
                             std::to_string(d));
    Eigen::VectorXd v(d);
    for (int c = 0; c < d; ++c) v[c] = normal(rng);
    if (v.norm() < 1e-6) continue;
    v.normalize();
    bool ok = true;
    for (const auto& u : chosen) ok = ok && u.dot(v) < max_cos;
    if (ok) chosen.push_back(v);
  }
  std::vector<std::vector<float>> out;
  for (const auto& v : chosen) {
    std::vector<float> f(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c) f[c] = static_cast<float>(v[c]);
    // Renormalize in float so the stored vector is unit to float precision.
    double sq = 0;
    for (float x : f) sq += double(x) * x;
    for (float& x : f) x = static_cast<float>(x / std::sqrt(sq));
    out.push_back(std::move(f));
  }
  return out;
}

struct SynthGeometry {
  std::vector<Eigen::Vector3d> centers;
  double radius = 0.5;
  bool ground = true;

  /// Index of the nearest surface hit (objects first, ground = centers.size()), or -1.
  int trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
    double best = INFINITY;
    int hit = -1;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      const Eigen::Vector3d oc = origin - centers[i];
      const double b = oc.dot(dir);
      const double c = oc.squaredNorm() - radius * radius;
      const double disc = b * b - c;
      if (disc < 0) continue;
      const double t = -b - std::sqrt(disc);
      if (t > 1e-9 && t < best) {
        best = t;
        hit = static_cast<int>(i);
      }
    }
    if (ground && dir.z() < 0) {
      const double t = -origin.z() / dir.z();
      if (t > 1e-9 && t < best) hit = static_cast<int>(centers.size());
    }
    return hit;
  }
};

}  // namespace

SynthScene synth_scene(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal;

  SynthGeometry geo;
  geo.radius = spec.sphere_radius;
  geo.ground = spec.ground_plane;
  const double ring = std::max(0.7, 2.4 * spec.sphere_radius * spec.objects / (2 * std::numbers::pi));
  const double phase = 2 * std::numbers::pi * uniform(rng);
  for (int i = 0; i < spec.objects; ++i) {
    const double a = phase + 2 * std::numbers::pi * i / spec.objects;
    geo.centers.emplace_back(ring * std::cos(a), ring * std::sin(a), spec.sphere_radius);
  }

  SynthScene out;
  for (int i = 0; i < spec.objects; ++i)
    out.object_colors.push_back(i < static_cast<int>(spec.colors.size()) ? spec.colors[i]
                                                                        : kPalette[i % kPalette.size()]);
  const int surfaces = spec.objects + (spec.ground_plane ? 1 : 0);
  out.canonical_features = separated_features(surfaces + 1, spec.feature_dim, 0.3, rng);
  const auto& background_feature = out.canonical_features.back();
  auto surface_color = [&](int hit) -> Eigen::Vector3d {
    if (hit < 0) return spec.background;
    return hit < spec.objects ? out.object_colors[hit] : kGroundColor;
  };

  // Cameras on a ring, looking down at the objects.
  const double cam_radius = 2.5 + ring - 0.7, cam_height = 3.5;
  const double focal = 1.4 * spec.width;
  SceneInit& data = out.data;
  for (int v = 0; v < spec.views; ++v) {
    const double a = 2 * std::numbers::pi * v / spec.views;
    const Eigen::Vector3d eye(cam_radius * std::cos(a), cam_radius * std::sin(a), cam_height);
    data.cameras.push_back(look_at(v, spec.width, spec.height, focal, focal, eye,
                                   Eigen::Vector3d(0, 0, 0.25), Eigen::Vector3d(0, 0, 1)));
  }

  const int ss = spec.supersample;
  for (const Camera& cam : data.cameras) {
    const Eigen::Matrix3d r_t = cam.rotation().transpose();
    const Eigen::Vector3d origin = cam.center();
    Image<float> img(cam.height, cam.width, 3);
    FeatureMap fm{cam.id, Image<float>(cam.height, cam.width, spec.feature_dim)};
    for (int row = 0; row < cam.height; ++row) {
      for (int col = 0; col < cam.width; ++col) {
        auto world_dir = [&](double x, double y) {
          return (r_t * Eigen::Vector3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)).normalized();
        };
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int sy = 0; sy < ss; ++sy)
          for (int sx = 0; sx < ss; ++sx) {
            const double x = col + (sx + 0.5) / ss - 0.5, y = row + (sy + 0.5) / ss - 0.5;
            acc += surface_color(geo.trace(origin, world_dir(x, y)));
          }
        acc /= double(ss * ss);
        for (int c = 0; c < 3; ++c) img.at(row, col, c) = static_cast<float>(acc[c]);
        const int hit = geo.trace(origin, world_dir(col, row));
        const auto& f = hit < 0 ? background_feature : out.canonical_features[hit];
        std::copy(f.begin(), f.end(), fm.grid.pixel(row, col));
      }
    }
    // Quantize exactly as the PPM writer does so in-memory and on-disk datasets agree.
    for (float& v : img.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    data.images.push_back(std::move(img));
    data.features.push_back(std::move(fm));
  }

  // Sparse points on the surfaces with 1% positional noise.
  const double noise = 0.01 * spec.sphere_radius;
  std::int64_t next_id = 0;
  auto add_point = [&](const Eigen::Vector3d& p, const Eigen::Vector3d& color) {
    ScenePoint sp;
    sp.id = next_id++;
    sp.position = p + noise * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
    sp.color = (color * 255.0).array().round() / 255.0;
    data.points.push_back(sp);
  };
  for (int i = 0; i < spec.objects; ++i) {
    for (int k = 0; k < spec.points_per_object; ++k) {
      Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
      dir.normalize();
      add_point(geo.centers[i] + spec.sphere_radius * dir, out.object_colors[i]);
    }
  }
  if (spec.ground_plane) {
    const double extent = cam_radius + 2.0;
    for (int k = 0; k < spec.ground_points; ++k) {
      const double rr = extent * std::sqrt(uniform(rng)), a = 2 * std::numbers::pi * uniform(rng);
      add_point(Eigen::Vector3d(rr * std::cos(a), rr * std::sin(a), 0.0), kGroundColor);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Scene<float>& scene, const fs::path& path) {
  const auto d = static_cast<std::uint32_t>(scene.feature_dim);
  std::string out = "FHGS";
  out.reserve(16 + scene.size() * (kNumParams + d) * 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(scene.size()));
  put_u32(out, d);
  for (const auto& p : scene.primitives) {
    if (p.feature.size() != d) throw UsageError("save_checkpoint: primitive feature dimension mismatch");
    for (int k = 0; k < kNumParams; ++k) put_f32(out, p.param(k));
    for (float f : p.feature) put_f32(out, f);
  }
  write_bytes(path, out);
}

Scene<float> load_checkpoint(const fs::path& path) {
  const std::vector<char> bytes = read_bytes(path);
  if (bytes.size() < 16) fail(path, "truncated checkpoint header");
  if (std::memcmp(bytes.data(), "FHGS", 4) != 0) fail(path, "bad magic (expected FHGS)");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) fail(path, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(bytes.data() + 8);
  const std::uint32_t d = get_u32(bytes.data() + 12);
  const std::uint64_t expected = 16 + 4ull * count * (kNumParams + d);
  if (bytes.size() != expected)
    fail(path, "expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  Scene<float> scene;
  scene.feature_dim = static_cast<int>(d);
  scene.primitives.resize(count);
  const char* p = bytes.data() + 16;
  for (auto& prim : scene.primitives) {
    for (int k = 0; k < kNumParams; ++k, p += 4) prim.param(k) = get_f32(p);
    prim.feature.resize(d);
    for (auto& f : prim.feature) {
      f = get_f32(p);
      p += 4;
    }
  }
  return scene;
}

}  // namespace fhgs
