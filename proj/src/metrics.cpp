#include "fhgs/metrics.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fhgs {

template <typename Real>
double psnr(const Image<Real>& rendered, const Image<float>& gt) {
  if (!gt.same_shape(rendered.height, rendered.width, rendered.channels))
    throw UsageError("psnr: image dimensions differ");
  if (rendered.data.empty()) throw UsageError("psnr: empty image");
  double se = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const double d = double(rendered.data[i]) - double(gt.data[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(gt.data.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

template <typename Real>
double fl1(const Image<Real>& rendered, const FeatureMap& gt, bool normalize) {
  if (!gt.grid.same_shape(rendered.height, rendered.width, rendered.channels))
    throw UsageError("fl1: rendered feature image has shape " + std::to_string(rendered.height) + "x" +
                     std::to_string(rendered.width) + "x" + std::to_string(rendered.channels) +
                     ", ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()) +
                     "x" + std::to_string(gt.channels()));
  const int d = rendered.channels;
  double sum = 0;
  for (int row = 0; row < rendered.height; ++row) {
    for (int col = 0; col < rendered.width; ++col) {
      const Real* r = rendered.pixel(row, col);
      const float* g = gt.at(row, col);
      double scale = 1;
      if (normalize) {
        double sq = 0;
        for (int c = 0; c < d; ++c) sq += double(r[c]) * r[c];
        if (sq > 0) scale = 1 / std::sqrt(sq);
      }
      for (int c = 0; c < d; ++c) sum += std::abs(scale * double(r[c]) - double(g[c]));
    }
  }
  return sum / static_cast<double>(rendered.data.size());
}

template <typename Real>
double fe(const Scene<Real>& scene, const SceneInit& data, const ObjectiveOptions& options) {
  if (data.view_count() == 0) return 0;
  double sum = 0;
  for (std::size_t v = 0; v < data.view_count(); ++v)
    sum += evaluate_view(scene, data.cameras[v], data.images[v], data.features[v], options).bundle.l_gt;
  return sum / static_cast<double>(data.view_count());
}

void EvalReport::finalize() {
  if (views.empty()) {
    mean_psnr.reset();
    mean_fe.reset();
    mean_fl1.reset();
    return;
  }
  double p = 0, e = 0, l = 0;
  for (const auto& v : views) {
    p += v.psnr;
    e += v.fe;
    l += v.fl1;
  }
  const double n = static_cast<double>(views.size());
  mean_psnr = p / n;
  mean_fe = e / n;
  mean_fl1 = l / n;
}

template <typename Real>
EvalReport evaluate(const Scene<Real>& scene, const SceneInit& data, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.primitives = scene.size();
  RenderTargets<Real> targets;
  targets.color = false;
  targets.feature = true;
  for (std::size_t v = 0; v < data.view_count(); ++v) {
    const Camera& cam = data.cameras[v];
    Image<Real> color;
    const ViewLoss loss =
        evaluate_view<Real>(scene, cam, data.images[v], data.features[v], options.objective, nullptr, &color);
    const RenderOutput<Real> out = render_view(scene, cam, options.objective.raster, targets);
    ViewMetrics m;
    m.view_id = cam.id;
    m.psnr = psnr(color, data.images[v]);
    m.fe = loss.bundle.l_gt;
    m.fl1 = scene.empty() ? fl1(Image<Real>(cam.height, cam.width, data.feature_dim()), data.features[v],
                                options.fl1_normalize)
                          : fl1(out.feature, data.features[v], options.fl1_normalize);
    report.views.push_back(m);
  }
  report.finalize();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  ordered_json j;
  j["primitives"] = report.primitives;
  j["seconds"] = report.seconds;
  j["mean"] = ordered_json{{"psnr", optional_number(report.mean_psnr)},
                           {"fe", optional_number(report.mean_fe)},
                           {"fl1", optional_number(report.mean_fl1)}};
  ordered_json rows = ordered_json::array();
  for (const auto& v : report.views)
    rows.push_back(ordered_json{{"view_id", v.view_id}, {"psnr", v.psnr}, {"fe", v.fe}, {"fl1", v.fl1}});
  j["views"] = rows;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.primitives = j.at("primitives").get<std::size_t>();
    r.seconds = j.at("seconds").get<double>();
    const auto& mean = j.at("mean");
    r.mean_psnr = read_optional(mean, "psnr");
    r.mean_fe = read_optional(mean, "fe");
    r.mean_fl1 = read_optional(mean, "fl1");
    for (const auto& row : j.at("views")) {
      r.views.push_back({row.at("view_id").get<int>(), row.at("psnr").get<double>(),
                         row.at("fe").get<double>(), row.at("fl1").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed report: ") + e.what());
  }
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw LoadError(path.string() + ": cannot open file for writing");
    out << report_to_json(report);
    if (!out) throw LoadError(path.string() + ": write failed");
  }
  std::filesystem::path csv = path;
  csv.replace_extension(".csv");
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw LoadError(csv.string() + ": cannot open file for writing");
  out.precision(17);
  out << "view_id,psnr,fe,fl1\n";
  for (const auto& v : report.views) out << v.view_id << ',' << v.psnr << ',' << v.fe << ',' << v.fl1 << '\n';
  if (!out) throw LoadError(csv.string() + ": write failed");
}

EvalReport parse_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return report_from_json(ss.str());
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

#define FHGS_INSTANTIATE(Real)                                                         \
  template double psnr(const Image<Real>&, const Image<float>&);                       \
  template double fl1(const Image<Real>&, const FeatureMap&, bool);                    \
  template double fe(const Scene<Real>&, const SceneInit&, const ObjectiveOptions&);   \
  template EvalReport evaluate(const Scene<Real>&, const SceneInit&, const EvalOptions&);

FHGS_INSTANTIATE(float)
FHGS_INSTANTIATE(double)
#undef FHGS_INSTANTIATE

}  // namespace fhgs
