#include "support.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <functional>
#include <json.hpp>

using namespace fhgs;
using namespace fhgs::testing;

namespace {

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void spill(const fs::path& p, const std::string& text) { spill(p, std::vector<char>(text.begin(), text.end())); }

std::string load_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("PPM round-trips quantized images") {
  TempDir dir("ppm");
  std::mt19937_64 rng(81);
  Image<float> img = random_image(rng, 7, 5, 3);
  for (auto& x : img.data) x = std::round(x * 255.0f) / 255.0f;
  write_ppm(dir / "a.ppm", img);
  const Image<float> back = read_ppm(dir / "a.ppm");
  CHECK(back.same_shape(7, 5, 3));
  CHECK(back.data == img.data);
}

TEST_CASE("PPM corruption is reported") {
  TempDir dir("ppm_bad");
  spill(dir / "p3.ppm", std::string("P3\n1 1\n255\n0 0 0\n"));
  CHECK(contains(load_error([&] { read_ppm(dir / "p3.ppm"); }), "expected magic P6"));
  spill(dir / "short.ppm", std::string("P6\n2 2\n255\nabc"));
  CHECK(contains(load_error([&] { read_ppm(dir / "short.ppm"); }), "expected 12 raster bytes, found 3"));
  spill(dir / "deep.ppm", std::string("P6\n1 1\n65535\n\0\0\0\0\0\0", 20));
  CHECK(contains(load_error([&] { read_ppm(dir / "deep.ppm"); }), "16-bit"));
  CHECK(contains(load_error([&] { read_ppm(dir / "missing.ppm"); }), "cannot open file"));
}

TEST_CASE("FMAP round-trips bit-exactly and has the documented layout") {
  TempDir dir("fmap");
  std::mt19937_64 rng(82);
  const Image<float> grid = random_image(rng, 3, 4, 5);
  write_fmap(dir / "a.fmap", grid);
  const auto bytes = slurp(dir / "a.fmap");
  CHECK(bytes.size() == kFmapHeaderBytes + 3 * 4 * 5 * 4);
  CHECK(std::string(bytes.data(), 4) == "FMAP");
  const Image<float> back = read_fmap(dir / "a.fmap");
  CHECK(back.same_shape(3, 4, 5));
  CHECK(std::memcmp(back.data.data(), grid.data.data(), grid.data.size() * sizeof(float)) == 0);
}

TEST_CASE("FMAP corruption is reported") {
  TempDir dir("fmap_bad");
  write_fmap(dir / "a.fmap", Image<float>(2, 2, 2, 1.0f));
  auto bytes = slurp(dir / "a.fmap");

  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  spill(dir / "t.fmap", truncated);
  CHECK(contains(load_error([&] { read_fmap(dir / "t.fmap"); }), "expected 52 bytes, found 48"));

  auto magic = bytes;
  magic[0] = 'X';
  spill(dir / "m.fmap", magic);
  CHECK(contains(load_error([&] { read_fmap(dir / "m.fmap"); }), "bad magic"));

  auto version = bytes;
  version[4] = 9;
  spill(dir / "v.fmap", version);
  CHECK(contains(load_error([&] { read_fmap(dir / "v.fmap"); }), "unsupported FMAP version 9"));

  spill(dir / "h.fmap", std::vector<char>(bytes.begin(), bytes.begin() + 10));
  CHECK(contains(load_error([&] { read_fmap(dir / "h.fmap"); }), "header bytes"));
}

TEST_CASE("cameras.json round-trips exactly") {
  TempDir dir("cams");
  std::vector<Camera> cams = {test_camera(30, 20, 3), test_camera(16, 16, 7, {1.1, 2.2, -3.3})};
  cams[1].cx = 7.123456789012345;
  write_cameras(dir / "cameras.json", cams);
  const auto back = read_cameras(dir / "cameras.json");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == cams[i].id);
    CHECK(back[i].width == cams[i].width);
    CHECK(back[i].fx == cams[i].fx);
    CHECK(back[i].cx == cams[i].cx);
    CHECK(back[i].world_to_camera == cams[i].world_to_camera);
  }
  write_cameras(dir / "again.json", back);
  CHECK(slurp(dir / "again.json") == slurp(dir / "cameras.json"));
}

TEST_CASE("cameras.json problems: missing keys fail, unknown keys warn") {
  TempDir dir("cams_bad");
  write_cameras(dir / "c.json", {test_camera(8, 8, 1)});
  auto j = nlohmann::json::parse(slurp(dir / "c.json"));
  auto missing = j;
  missing[0].erase("fx");
  spill(dir / "missing.json", missing.dump());
  CHECK(contains(load_error([&] { read_cameras(dir / "missing.json"); }), "lacks key 'fx'"));

  auto extra = j;
  extra[0]["distortion"] = 0.1;
  spill(dir / "extra.json", extra.dump());
  std::vector<std::string> warnings;
  CHECK(read_cameras(dir / "extra.json", &warnings).size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(contains(warnings[0], "distortion"));

  spill(dir / "broken.json", std::string("[{"));
  CHECK(contains(load_error([&] { read_cameras(dir / "broken.json"); }), "malformed JSON"));
}

TEST_CASE("points.txt round-trips and rejects duplicates") {
  TempDir dir("pts");
  std::vector<ScenePoint> pts = {{4, {0.1, -0.2, 1.0 / 3.0}, {1.0, 0.0, 128.0 / 255.0}},
                                 {9, {5, 6, 7}, {0.2, 0.4, 0.6}}};
  write_points(dir / "points.txt", pts);
  const auto back = read_points(dir / "points.txt");
  REQUIRE(back.size() == 2);
  CHECK(back[0].position == pts[0].position);
  CHECK(back[0].color == pts[0].color);
  CHECK(back[1].id == 9);
  spill(dir / "dup.txt", std::string("1 0 0 0 0 0 0\n1 1 1 1 0 0 0\n"));
  CHECK(contains(load_error([&] { read_points(dir / "dup.txt"); }), "duplicate point id 1"));
  spill(dir / "short.txt", std::string("1 0 0\n"));
  CHECK(contains(load_error([&] { read_points(dir / "short.txt"); }), "line 1"));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempDir dir("ckpt");
  std::mt19937_64 rng(83);
  const Scene<float> s = random_scene<float>(rng, 25, 7);
  save_checkpoint(s, dir / "s.fhgs");
  const Scene<float> back = load_checkpoint(dir / "s.fhgs");
  REQUIRE(back.size() == s.size());
  CHECK(back.feature_dim == 7);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (int p = 0; p < kNumParams; ++p) CHECK(back.primitives[i].param(p) == s.primitives[i].param(p));
    CHECK(back.primitives[i].feature == s.primitives[i].feature);
  }
  CHECK(feature_checksum(back) == feature_checksum(s));
}

TEST_CASE("checkpoint corruption is reported") {
  TempDir dir("ckpt_bad");
  std::mt19937_64 rng(84);
  save_checkpoint(random_scene<float>(rng, 3, 2), dir / "s.fhgs");
  auto bytes = slurp(dir / "s.fhgs");
  auto cut = bytes;
  cut.pop_back();
  spill(dir / "cut.fhgs", cut);
  CHECK(contains(load_error([&] { load_checkpoint(dir / "cut.fhgs"); }), "expected"));
  auto magic = bytes;
  magic[1] = 'X';
  spill(dir / "magic.fhgs", magic);
  CHECK(contains(load_error([&] { load_checkpoint(dir / "magic.fhgs"); }), "bad magic"));
  spill(dir / "tiny.fhgs", std::vector<char>(bytes.begin(), bytes.begin() + 6));
  CHECK(contains(load_error([&] { load_checkpoint(dir / "tiny.fhgs"); }), "truncated"));
}

TEST_CASE("datasets round-trip through save/load and sort views by id") {
  TempDir dir("ds");
  SynthScene syn = small_synth();
  std::reverse(syn.data.cameras.begin(), syn.data.cameras.end());
  std::reverse(syn.data.images.begin(), syn.data.images.end());
  std::reverse(syn.data.features.begin(), syn.data.features.end());
  save_dataset(dir.path(), syn.data);
  LoadReport rep;
  const SceneInit back = load_dataset(dir.path(), &rep);
  REQUIRE(back.view_count() == 4);
  for (std::size_t i = 0; i + 1 < back.view_count(); ++i) CHECK(back.cameras[i].id < back.cameras[i + 1].id);
  CHECK(back.points.size() == syn.data.points.size());
  CHECK(validate_scene(back).empty());
  const int pos = syn.data.find_view(back.cameras[0].id);
  CHECK(back.images[0].data == syn.data.images[static_cast<std::size_t>(pos)].data);
}

TEST_CASE("dataset loading catches missing and mismatched files") {
  TempDir dir("ds_bad");
  const SynthScene syn = small_synth();
  save_dataset(dir.path(), syn.data);
  const int id = syn.data.cameras[1].id;
  SUBCASE("missing feature map") {
    fs::remove(dir / ("features/" + std::to_string(id) + ".fmap"));
    CHECK(contains(load_error([&] { load_dataset(dir.path()); }), "missing feature map"));
  }
  SUBCASE("wrong feature dimension") {
    write_fmap(dir / ("features/" + std::to_string(id) + ".fmap"), Image<float>(48, 48, 3, 0.5f));
    CHECK(contains(load_error([&] { load_dataset(dir.path()); }), "feature dimension"));
  }
  SUBCASE("wrong image size") {
    write_ppm(dir / ("images/" + std::to_string(id) + ".ppm"), Image<float>(10, 10, 3));
    CHECK(contains(load_error([&] { load_dataset(dir.path()); }), "image size"));
  }
  SUBCASE("no directory") { CHECK(contains(load_error([&] { load_dataset(dir / "nope"); }), "not found")); }
}

TEST_CASE("correspondence index matches a brute-force projection of every point") {
  const SynthScene syn = small_synth();
  const auto& d = syn.data;
  const IndexResult idx = build_index(d.points, d.cameras);
  std::size_t excluded = 0;
  for (const auto& p : d.points) {
    std::vector<Observation> ref;
    for (const auto& cam : d.cameras) {
      const Eigen::Vector3d c = cam.to_camera(p.position);
      if (!(c.z() > kNearPlane)) continue;
      const long col = std::lround(cam.fx * c.x() / c.z() + cam.cx);
      const long row = std::lround(cam.fy * c.y() / c.z() + cam.cy);
      if (col < 0 || row < 0 || col >= cam.width || row >= cam.height) continue;
      ref.push_back({cam.id, static_cast<int>(row), static_cast<int>(col)});
    }
    const auto it = idx.index.find(p.id);
    if (ref.empty()) {
      ++excluded;
      CHECK(it == idx.index.end());
      continue;
    }
    REQUIRE(it != idx.index.end());
    auto got = it->second;
    std::sort(got.begin(), got.end());
    std::sort(ref.begin(), ref.end());
    CHECK(got == ref);
  }
  CHECK(idx.excluded == excluded);
}

TEST_CASE("fused point features are unit vectors taken from an observing view") {
  const SynthScene syn = small_synth();
  const auto& d = syn.data;
  const IndexResult idx = build_index(d.points, d.cameras);
  const auto fused = fuse_point_features(d.points, idx.index, d, 9);
  CHECK(fused.size() == idx.index.size());
  for (const auto& [id, f] : fused) {
    double n = 0;
    for (float x : f) n += double(x) * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    bool found = false;
    for (const auto& o : idx.index.at(id)) {
      const float* g = d.features[static_cast<std::size_t>(d.find_view(o.view_id))].at(o.row, o.col);
      double dot = 0;
      for (std::size_t c = 0; c < f.size(); ++c) dot += double(f[c]) * g[c];
      found = found || dot > 1 - 1e-5;
    }
    CHECK(found);
  }
}

TEST_CASE("initialization: one primitive per observed point with the configured opacity") {
  const SynthScene syn = small_synth();
  InitConfig cfg;
  cfg.opacity = 0.1;
  cfg.seed = 4;
  InitReport rep;
  const Scene<float> s = initialize_scene(syn.data, cfg, &rep);
  CHECK(s.size() == rep.primitives);
  CHECK(rep.primitives + rep.excluded == syn.data.points.size());
  CHECK(validate_primitives(s).empty());
  for (const auto& p : s.primitives) {
    CHECK(p.opacity() == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(p.rotation.norm() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(p.log_scale[0] == p.log_scale[1]);
  }
  cfg.opacity = 1.0;
  CHECK_THROWS_AS(initialize_scene(syn.data, cfg), InvalidParameter);
}

TEST_CASE("synthetic two-sphere scene without ground has three canonical features") {
  SynthSpec spec;
  spec.views = 3;
  spec.width = spec.height = 32;
  spec.ground_plane = false;
  spec.points_per_object = 50;
  const SynthScene s = synth_scene(spec);
  REQUIRE(s.canonical_features.size() == 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) {
      double dot = 0;
      for (std::size_t c = 0; c < s.canonical_features[a].size(); ++c)
        dot += double(s.canonical_features[a][c]) * s.canonical_features[b][c];
      CHECK(dot < 0.3);
    }
  CHECK(validate_scene(s.data).empty());
}

TEST_CASE("a red sphere renders a red centre pixel in the ground truth") {
  SynthSpec spec;
  spec.views = 3;
  spec.width = spec.height = 64;
  spec.ground_plane = false;
  spec.colors = {{1, 0, 0}, {0, 1, 0}};
  spec.points_per_object = 50;
  const SynthScene s = synth_scene(spec);
  const Camera& cam = s.data.cameras[0];
  // Find the projection of the red sphere: the point cloud's first object.
  const auto px = cam.project(s.data.points.front().position);
  REQUIRE(px);
  Eigen::Vector3d centre = Eigen::Vector3d::Zero();
  for (int i = 0; i < spec.points_per_object; ++i) centre += s.data.points[static_cast<std::size_t>(i)].position;
  centre /= spec.points_per_object;
  const auto c = cam.project(centre);
  REQUIRE(c);
  const int row = static_cast<int>(std::lround((*c)[1])), col = static_cast<int>(std::lround((*c)[0]));
  CHECK(s.data.images[0].at(row, col, 0) == 1.0f);
  CHECK(s.data.images[0].at(row, col, 1) == 0.0f);
  CHECK(s.data.images[0].at(row, col, 2) == 0.0f);
}

TEST_CASE("synthetic spec validation") {
  SynthSpec spec;
  spec.objects = 1;
  CHECK_THROWS_AS(synth_scene(spec), UsageError);
  spec.objects = 2;
  spec.views = 2;
  CHECK_THROWS_AS(synth_scene(spec), UsageError);
}

TEST_CASE("a point on the optical axis indexes the rounded principal point; points behind every camera are excluded") {
  Camera cam = look_at(4, 20, 10, 30, 30, {0, 0, -1}, {0, 0, 0}, {0, 1, 0});
  cam.cx = 9.6;
  cam.cy = 4.4;
  const std::vector<ScenePoint> pts = {{1, {0, 0, 0}, {}}, {2, {0, 0, -3}, {}}};
  const IndexResult idx = build_index(pts, {cam});
  REQUIRE(idx.index.count(1) == 1);
  CHECK(idx.index.at(1) == std::vector<Observation>{{4, 4, 10}});
  CHECK(idx.index.count(2) == 0);
  CHECK(idx.excluded == 1);
}

TEST_CASE("a point seen by one view takes that view's normalized pixel feature") {
  SceneInit d;
  const Camera cam = look_at(0, 6, 6, 10, 10, {0, 0, -2}, {0, 0, 0}, {0, 1, 0});
  d.cameras.push_back(cam);
  d.images.push_back(Image<float>(6, 6, 3));
  FeatureMap fm;
  fm.grid = Image<float>(6, 6, 2, 0.0f);
  fm.grid.at(3, 3, 0) = 3.0f;
  fm.grid.at(3, 3, 1) = 4.0f;
  d.features.push_back(fm);
  d.points.push_back({7, {0, 0, 0}, {}});
  const auto fused = fuse_point_features(d.points, build_index(d.points, d.cameras).index, d, 1);
  CHECK(fused.at(7) == std::vector<float>{0.6f, 0.8f});
}

TEST_CASE("synthetic features: canonical per object, consistent across views and seeded") {
  const SynthScene syn = small_synth(10, false);
  const auto& d = syn.data;
  REQUIRE(syn.canonical_features.size() == 3);
  for (const auto& fm : d.features)
    for (int r = 0; r < fm.height(); ++r)
      for (int c = 0; c < fm.width(); ++c) {
        const float* f = fm.at(r, c);
        const bool canonical = std::any_of(syn.canonical_features.begin(), syn.canonical_features.end(),
                                           [&](const std::vector<float>& k) { return std::equal(k.begin(), k.end(), f); });
        CHECK(canonical);
      }
  const IndexResult idx = build_index(d.points, d.cameras);
  const auto a = fuse_point_features(d.points, idx.index, d, 1);
  const auto b = fuse_point_features(d.points, idx.index, d, 1);
  const auto c = fuse_point_features(d.points, idx.index, d, 2);
  CHECK(a == b);
  // Where every observation of a point reads the same canonical feature, the
  // fused feature is that vector whichever view the seed picks.
  std::size_t consistent = 0;
  for (const auto& [id, obs] : idx.index) {
    const auto& first = d.features[static_cast<std::size_t>(d.find_view(obs[0].view_id))];
    const std::vector<float> ref(first.at(obs[0].row, obs[0].col), first.at(obs[0].row, obs[0].col) + first.channels());
    bool agree = true;
    for (const auto& o : obs) {
      const float* g = d.features[static_cast<std::size_t>(d.find_view(o.view_id))].at(o.row, o.col);
      agree = agree && std::equal(ref.begin(), ref.end(), g);
    }
    if (!agree) continue;
    ++consistent;
    CHECK(a.at(id) == ref);
    CHECK(c.at(id) == ref);
  }
  CHECK(consistent > a.size() / 2);
}

TEST_CASE("generated datasets load without warnings and checkpoints re-save byte-identically") {
  TempDir dir("clean");
  const SynthScene syn = small_synth(11);
  save_dataset(dir / "ds", syn.data);
  LoadReport rep;
  load_dataset(dir / "ds", &rep);
  CHECK(rep.warnings.empty());
  CHECK(rep.renormalized == 0);
  const Scene<float> s = initialize_scene(syn.data, InitConfig{});
  save_checkpoint(s, dir / "a.fhgs");
  save_checkpoint(load_checkpoint(dir / "a.fhgs"), dir / "b.fhgs");
  CHECK(slurp(dir / "a.fhgs") == slurp(dir / "b.fhgs"));
}
