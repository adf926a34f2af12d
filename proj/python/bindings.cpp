#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fhgs/cli.hpp"
#include "fhgs/io.hpp"
#include "fhgs/metrics.hpp"
#include "fhgs/rasterizer.hpp"
#include "fhgs/trainer.hpp"

namespace py = pybind11;
using namespace fhgs;

namespace {

py::array_t<float> to_array(const Image<float>& img) {
  py::array_t<float> out({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

py::dict metric_row(const MetricRow& r) {
  py::dict d;
  d["iter"] = r.iter;
  d["l_rgb"] = r.l_rgb;
  d["l_gt"] = r.l_gt;
  d["l_cf"] = r.l_cf;
  d["total"] = r.total;
  d["psnr"] = r.psnr;
  d["fe"] = r.fe;
  d["fl1"] = r.fl1 ? py::cast(*r.fl1) : py::none();
  d["n_primitives"] = r.n_primitives;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fhgs, m) {
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.attr("NUM_PARAMS") = kNumParams;

  py::class_<SceneInit>(m, "Dataset")
      .def_static("load", [](const std::filesystem::path& dir) { return load_dataset(dir); }, py::arg("path"))
      .def("save", [](const SceneInit& d, const std::filesystem::path& dir) { save_dataset(dir, d); },
           py::arg("path"))
      .def_property_readonly("feature_dim", &SceneInit::feature_dim)
      .def_property_readonly("view_count", &SceneInit::view_count)
      .def_property_readonly("point_count", [](const SceneInit& d) { return d.points.size(); })
      .def_property_readonly("view_ids", [](const SceneInit& d) {
        std::vector<int> ids;
        for (const auto& c : d.cameras) ids.push_back(c.id);
        return ids;
      })
      .def("image", [](const SceneInit& d, int i) { return to_array(d.images.at(i)); }, py::arg("index"))
      .def("features", [](const SceneInit& d, int i) { return to_array(d.features.at(i).grid); },
           py::arg("index"));

  m.def(
      "synth",
      [](int objects, int feature_dim, int views, int width, int height, std::uint64_t seed, bool ground_plane) {
        SynthSpec spec;
        spec.objects = objects;
        spec.feature_dim = feature_dim;
        spec.views = views;
        spec.width = width;
        spec.height = height;
        spec.seed = seed;
        spec.ground_plane = ground_plane;
        return synth_scene(spec).data;
      },
      py::arg("objects") = 2, py::arg("feature_dim") = 16, py::arg("views") = 12, py::arg("width") = 128,
      py::arg("height") = 128, py::arg("seed") = 0, py::arg("ground_plane") = true);

  py::class_<Scene<float>>(m, "Scene")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const Scene<float>& s, const std::filesystem::path& p) { save_checkpoint(s, p); },
           py::arg("path"))
      .def("__len__", &Scene<float>::size)
      .def_readonly("feature_dim", &Scene<float>::feature_dim)
      .def_property_readonly("params", [](const Scene<float>& s) {
        py::array_t<float> out({static_cast<py::ssize_t>(s.size()), static_cast<py::ssize_t>(kNumParams)});
        float* dst = out.mutable_data();
        for (const auto& p : s.primitives)
          for (int k = 0; k < kNumParams; ++k) *dst++ = p.param(k);
        return out;
      })
      .def_property_readonly("features", [](const Scene<float>& s) {
        py::array_t<float> out({static_cast<py::ssize_t>(s.size()), static_cast<py::ssize_t>(s.feature_dim)});
        float* dst = out.mutable_data();
        for (const auto& p : s.primitives) dst = std::copy(p.feature.begin(), p.feature.end(), dst);
        return out;
      })
      .def_property_readonly("feature_checksum", [](const Scene<float>& s) { return feature_checksum(s); });

  m.def(
      "initialize",
      [](const SceneInit& data, double opacity, std::uint64_t seed) {
        InitConfig cfg;
        cfg.opacity = opacity;
        cfg.seed = seed;
        return initialize_scene(data, cfg);
      },
      py::arg("data"), py::arg("opacity") = 0.1, py::arg("seed") = 0);

  m.def(
      "train",
      [](const Scene<float>& init, const SceneInit& data, int iters, double lambda1, double lambda2,
         std::uint64_t seed, bool densify, bool deterministic, int threads) {
        TrainConfig cfg;
        cfg.iters = iters;
        cfg.lambda1 = lambda1;
        cfg.lambda2 = lambda2;
        cfg.seed = seed;
        cfg.densify.enabled = densify;
        cfg.deterministic = deterministic;
        cfg.threads = threads;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(init, data, cfg);
        }
        py::list log;
        for (const auto& row : r.log) log.append(metric_row(row));
        return py::make_tuple(std::move(r.scene), log);
      },
      py::arg("scene"), py::arg("data"), py::arg("iters") = 100, py::arg("lambda1") = 1.0,
      py::arg("lambda2") = 0.1, py::arg("seed") = 0, py::arg("densify") = true,
      py::arg("deterministic") = true, py::arg("threads") = 0);

  m.def(
      "render",
      [](const Scene<float>& scene, const SceneInit& data, int view_id, const std::string& mode,
         const std::string& traversal) {
        const int idx = data.find_view(view_id);
        if (idx < 0) throw UsageError("unknown view id " + std::to_string(view_id));
        RasterOptions opt;
        opt.traversal = parse_traversal(traversal);
        Image<float> img;
        {
          py::gil_scoped_release release;
          img = render(scene, data.cameras[idx], parse_render_mode(mode), opt);
        }
        return to_array(img);
      },
      py::arg("scene"), py::arg("data"), py::arg("view") = 0, py::arg("mode") = "rgb",
      py::arg("traversal") = "standard");

  m.def(
      "evaluate",
      [](const Scene<float>& scene, const SceneInit& data, bool fl1_normalize) {
        EvalOptions opt;
        opt.fl1_normalize = fl1_normalize;
        EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = evaluate(scene, data, opt);
        }
        py::dict d;
        d["psnr"] = rep.mean_psnr ? py::cast(*rep.mean_psnr) : py::none();
        d["fe"] = rep.mean_fe ? py::cast(*rep.mean_fe) : py::none();
        d["fl1"] = rep.mean_fl1 ? py::cast(*rep.mean_fl1) : py::none();
        d["primitives"] = rep.primitives;
        d["json"] = report_to_json(rep);
        return d;
      },
      py::arg("scene"), py::arg("data"), py::arg("fl1_normalize") = false);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
