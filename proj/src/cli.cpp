#include "fhgs/cli.hpp"

#include "fhgs/io.hpp"
#include "fhgs/metrics.hpp"
#include "fhgs/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace fhgs {
namespace {

struct SynthArgs {
  std::string out;
  int objects = 2;
  int feature_dim = 16;
  int views = 12;
  std::string size = "128x128";
  std::uint64_t seed = 0;
  bool no_ground = false;
  int points_per_object = 300;
  int ground_points = 700;
  bool force = false;
};

struct TrainArgs {
  std::string scene;
  int iters = 10000;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double k = 20.0;
  double sim_threshold = 0.5;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string traversal = "standard";
  std::string out = "scene.fhgs";
  std::string log;
  double init_opacity = 0.1;
  double ssim_weight = 0.2;
  bool pure_l1 = false;
  bool invert_cf_polarity = false;
  bool no_densify = false;
  int densify_interval = 100;
  int densify_start = 500;
  int densify_stop = -1;
  double grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  std::size_t max_primitives = 0;
  int eval_interval = 500;
  int progress = 100;
};

struct RenderArgs {
  std::string checkpoint;
  std::string scene;
  int view = 0;
  std::string mode = "rgb";
  std::string out;
  std::vector<int> channels;
  std::string traversal = "standard";
};

struct EvalArgs {
  std::string checkpoint;
  std::string scene;
  std::string out = "report.json";
  bool fl1_normalize = false;
  std::string traversal = "standard";
  double k = 20.0;
  double sim_threshold = 0.5;
};

struct CheckGradArgs {
  std::string scene;
  std::string checkpoint;
  int n_probes = 200;
  double tolerance = 1e-3;
  std::string loss = "all";
  std::uint64_t seed = 0;
  int primitives = 50;
  int view = -1;
  std::string traversal = "standard";
};

struct CliState {
  int threads = 0;
  std::string config;
  SynthArgs synth;
  TrainArgs train;
  RenderArgs render;
  EvalArgs eval;
  CheckGradArgs check_grad;
};

const std::vector<std::string> kTraversals = {"standard", "paper_literal"};

std::unique_ptr<CLI::App> make_app(CliState& s) {
  auto app = std::make_unique<CLI::App>(
      "Feature-homogenized gaussian splatting: synthesize, train, render and evaluate scenes.", "fhgs");
  app->option_defaults()->always_capture_default();
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app->fallthrough();
  app->require_subcommand(1);
  app->add_option("--threads", s.threads,
                  "Worker threads; 0 reads FHGS_THREADS, then uses every core")
      ->check(CLI::NonNegativeNumber);

  auto add_config = [&s](CLI::App* sub) {
    sub->add_option("--config", s.config, "JSON object whose keys mirror the long flags (flags win)");
  };

  CLI::App* synth = app->add_subcommand("synth", "Write a synthetic dataset of spheres on a ground plane");
  add_config(synth);
  synth->add_option("--out", s.synth.out, "Output dataset directory")->required();
  synth->add_option("--objects", s.synth.objects, "Number of spheres (at least 2)");
  synth->add_option("--feature-dim", s.synth.feature_dim, "Feature dimension d");
  synth->add_option("--views", s.synth.views, "Number of ring cameras (at least 3)");
  synth->add_option("--size", s.synth.size, "Image size as WxH");
  synth->add_option("--seed", s.synth.seed, "Random seed");
  synth->add_flag("--no-ground", s.synth.no_ground, "Omit the ground plane (background shows through)");
  synth->add_option("--points-per-object", s.synth.points_per_object, "Sparse points per sphere");
  synth->add_option("--ground-points", s.synth.ground_points, "Sparse points on the ground plane");
  synth->add_flag("--force", s.synth.force, "Allow writing into a non-empty directory");

  CLI::App* train = app->add_subcommand("train", "Optimize a scene from a dataset");
  add_config(train);
  auto& t = s.train;
  train->add_option("--scene", t.scene, "Dataset directory")->required();
  train->add_option("--iters", t.iters, "Optimization steps")->check(CLI::NonNegativeNumber);
  train->add_option("--lambda1", t.lambda1, "Weight of the external potential loss");
  train->add_option("--lambda2", t.lambda2, "Weight of the internal clustering loss");
  train->add_option("--k", t.k, "Slope of the similarity sigmoid");
  train->add_option("--sim-threshold", t.sim_threshold, "Cosine threshold of the similarity sigmoid");
  train->add_option("--seed", t.seed, "Random seed (initialization, view order, densification)");
  train->add_flag("--deterministic", t.deterministic, "Reproducible logs (elapsed time written as 0)");
  train->add_option("--traversal", t.traversal, "Compositing order")->check(CLI::IsMember(kTraversals));
  train->add_option("--out", t.out, "Checkpoint written at the end (or last good state on abort)");
  train->add_option("--log", t.log, "Per-iteration metric CSV (none if empty)");
  train->add_option("--init-opacity", t.init_opacity, "Opacity of initialized primitives");
  train->add_option("--ssim-weight", t.ssim_weight, "D-SSIM share of the photometric loss");
  train->add_flag("--pure-l1", t.pure_l1, "Photometric loss without the D-SSIM term");
  train->add_flag("--invert-cf-polarity", t.invert_cf_polarity, "Use 1 - sigma inside the clustering loss");
  train->add_flag("--no-densify", t.no_densify, "Disable cloning, splitting and pruning");
  train->add_option("--densify-interval", t.densify_interval, "Iterations between densification steps");
  train->add_option("--densify-start", t.densify_start, "First densification iteration");
  train->add_option("--densify-stop", t.densify_stop, "Densification end; -1 means 3/4 of --iters");
  train->add_option("--grad-threshold", t.grad_threshold, "Mean screen gradient that triggers clone/split");
  train->add_option("--prune-opacity", t.prune_opacity, "Primitives below this opacity are removed");
  train->add_option("--max-primitives", t.max_primitives, "Cap on the primitive count; 0 = no cap");
  train->add_option("--eval-interval", t.eval_interval, "Iterations between dataset FL1 evaluations");
  train->add_option("--progress", t.progress, "Print a progress line every N iterations; 0 = quiet");

  CLI::App* render = app->add_subcommand("render", "Render one view of a checkpoint");
  add_config(render);
  auto& r = s.render;
  render->add_option("--checkpoint", r.checkpoint, "Checkpoint file")->required();
  render->add_option("--scene", r.scene, "Dataset directory providing the cameras")->required();
  render->add_option("--view", r.view, "View id");
  render->add_option("--mode", r.mode, "Render target")
      ->check(CLI::IsMember({"rgb", "feature", "depth", "normal", "weight"}));
  render->add_option("--out", r.out, "Output file: .ppm for rgb or mapped features, .fmap otherwise")
      ->required();
  render->add_option("--channels", r.channels, "Feature channels mapped to R,G,B (feature mode, PPM output)")
      ->delimiter(',')
      ->expected(3);
  render->add_option("--traversal", r.traversal, "Compositing order")->check(CLI::IsMember(kTraversals));

  CLI::App* eval = app->add_subcommand("eval", "Evaluate PSNR, FE and FL1 over every view");
  add_config(eval);
  auto& e = s.eval;
  eval->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  eval->add_option("--scene", e.scene, "Dataset directory")->required();
  eval->add_option("--out", e.out, "Report JSON path; a CSV with the same stem is written beside it");
  eval->add_flag("--fl1-normalize", e.fl1_normalize, "Normalize rendered features before FL1");
  eval->add_option("--traversal", e.traversal, "Compositing order")->check(CLI::IsMember(kTraversals));
  eval->add_option("--k", e.k, "Slope of the similarity sigmoid used by FE");
  eval->add_option("--sim-threshold", e.sim_threshold, "Cosine threshold used by FE");

  CLI::App* check = app->add_subcommand("check-grad", "Compare analytic gradients with finite differences");
  add_config(check);
  auto& c = s.check_grad;
  check->add_option("--scene", c.scene, "Dataset directory")->required();
  check->add_option("--checkpoint", c.checkpoint, "Checkpoint to probe instead of the initialization");
  check->add_option("--n-probes", c.n_probes, "Number of (primitive, parameter) probes");
  check->add_option("--tolerance", c.tolerance, "Largest accepted relative error");
  check->add_option("--loss", c.loss, "Loss term(s) to differentiate")
      ->check(CLI::IsMember({"rgb", "gt", "cf", "all"}));
  check->add_option("--seed", c.seed, "Probe and subset seed");
  check->add_option("--primitives", c.primitives, "Primitives kept from the scene (random subset)");
  check->add_option("--view", c.view, "View id; -1 = first view");
  check->add_option("--traversal", c.traversal, "Compositing order")->check(CLI::IsMember(kTraversals));
  return app;
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const int w = std::stoi(text.substr(0, x), &a);
    const int h = std::stoi(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1) throw std::invalid_argument(text);
    return {w, h};
  } catch (const std::exception&) {
    throw UsageError("--size must look like 128x128, got '" + text + "'");
  }
}

int do_synth(const CliState& s, std::ostream& out) {
  const SynthArgs& a = s.synth;
  const fs::path dir(a.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !a.force)
    throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
  SynthSpec spec;
  spec.objects = a.objects;
  spec.feature_dim = a.feature_dim;
  spec.views = a.views;
  std::tie(spec.width, spec.height) = parse_size(a.size);
  spec.seed = a.seed;
  spec.ground_plane = !a.no_ground;
  spec.points_per_object = a.points_per_object;
  spec.ground_points = a.ground_points;
  const SynthScene scene = synth_scene(spec);
  save_dataset(dir, scene.data);
  out << "wrote " << dir.string() << "\n"
      << "  views        " << scene.data.view_count() << " (" << spec.width << "x" << spec.height << ")\n"
      << "  objects      " << spec.objects << (spec.ground_plane ? " + ground plane" : "") << "\n"
      << "  feature dim  " << spec.feature_dim << "\n"
      << "  points       " << scene.data.points.size() << "\n";
  return kExitOk;
}

SceneInit load_checked(const std::string& dir, std::ostream& err) {
  LoadReport report;
  SceneInit data = load_dataset(dir, &report);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  return data;
}

int do_train(const CliState& s, std::ostream& out, std::ostream& err) {
  const TrainArgs& a = s.train;
  const SceneInit data = load_checked(a.scene, err);
  TrainConfig cfg;
  cfg.iters = a.iters;
  cfg.lambda1 = a.lambda1;
  cfg.lambda2 = a.lambda2;
  cfg.activation.slope = a.k;
  cfg.activation.threshold = a.sim_threshold;
  cfg.invert_cf_polarity = a.invert_cf_polarity;
  cfg.traversal = parse_traversal(a.traversal);
  cfg.photometric.ssim_weight = a.ssim_weight;
  cfg.photometric.pure_l1 = a.pure_l1;
  cfg.densify.enabled = !a.no_densify;
  cfg.densify.interval = a.densify_interval;
  cfg.densify.start = a.densify_start;
  cfg.densify.stop = a.densify_stop;
  cfg.densify.grad_threshold = a.grad_threshold;
  cfg.densify.prune_opacity = a.prune_opacity;
  cfg.densify.max_primitives = a.max_primitives;
  cfg.seed = a.seed;
  cfg.deterministic = a.deterministic;
  cfg.eval_interval = a.eval_interval;
  cfg.threads = s.threads;
  cfg.validate();

  InitConfig init_cfg;
  init_cfg.opacity = a.init_opacity;
  init_cfg.seed = a.seed;
  InitReport init_report;
  const Scene<float> init = initialize_scene(data, init_cfg, &init_report);
  out << "initialized " << init_report.primitives << " primitives (" << init_report.excluded
      << " points seen by no view)\n";

  const TrainResult result = train(init, data, cfg, [&](const MetricRow& row) {
    if (a.progress > 0 && row.iter % a.progress == 0) {
      out << "iter " << row.iter << "  loss " << row.total << "  psnr " << row.psnr << "  fe " << row.fe
          << "  n " << row.n_primitives << "\n";
      out.flush();
    }
  });
  save_checkpoint(result.scene, a.out);
  if (!a.log.empty()) write_metric_log(a.log, result.log);
  if (result.aborted) {
    err << "error: training aborted: " << result.abort_reason << "\n"
        << "last good state saved to " << a.out << "\n";
    return kExitInternal;
  }
  out << "trained " << result.iterations << " iterations, " << result.scene.size() << " primitives (cloned "
      << result.densified.cloned << ", split " << result.densified.split << ", pruned "
      << result.densified.pruned << ")\n"
      << "checkpoint " << a.out << "\n";
  return kExitOk;
}

const Camera& find_camera(const SceneInit& data, int view) {
  const int idx = data.find_view(view);
  if (idx < 0) throw UsageError("unknown view " + std::to_string(view));
  return data.cameras[static_cast<std::size_t>(idx)];
}

void check_scene_dim(const Scene<float>& scene, const SceneInit& data) {
  if (!scene.empty() && scene.feature_dim != data.feature_dim())
    throw UsageError("checkpoint feature dimension " + std::to_string(scene.feature_dim) +
                     " differs from dataset dimension " + std::to_string(data.feature_dim()));
}

int do_render(const CliState& s, std::ostream& out, std::ostream& err) {
  const RenderArgs& a = s.render;
  const SceneInit data = load_checked(a.scene, err);
  const Scene<float> scene = load_checkpoint(a.checkpoint);
  check_scene_dim(scene, data);
  const Camera& cam = find_camera(data, a.view);
  const RenderMode mode = parse_render_mode(a.mode);
  RasterOptions ro;
  ro.traversal = parse_traversal(a.traversal);
  ro.threads = s.threads;
  if (!a.channels.empty() && mode != RenderMode::feature)
    throw UsageError("--channels applies to --mode feature only");
  for (int ch : a.channels)
    if (ch < 0 || ch >= scene.feature_dim)
      throw UsageError("channel " + std::to_string(ch) + " outside [0, " + std::to_string(scene.feature_dim) + ")");

  const bool ppm = mode == RenderMode::rgb || !a.channels.empty();
  const std::string ext = fs::path(a.out).extension().string();
  if (ppm && ext != ".ppm") throw UsageError("this render writes PPM; --out must end in .ppm");
  if (!ppm && ext != ".fmap") throw UsageError("this render writes FMAP; --out must end in .fmap");

  const Image<float> img = render(scene, cam, mode, ro);
  if (mode == RenderMode::rgb) {
    write_ppm(a.out, img);
  } else if (ppm) {
    Image<float> mapped(img.height, img.width, 3);
    for (int row = 0; row < img.height; ++row)
      for (int col = 0; col < img.width; ++col)
        for (int c = 0; c < 3; ++c) mapped.at(row, col, c) = 0.5f + 0.5f * img.at(row, col, a.channels[c]);
    write_ppm(a.out, mapped);
  } else {
    write_fmap(a.out, img);
  }
  out << "wrote " << a.out << " (" << to_string(mode) << ", view " << a.view << ")\n";
  return kExitOk;
}

int do_eval(const CliState& s, std::ostream& out, std::ostream& err) {
  const EvalArgs& a = s.eval;
  const SceneInit data = load_checked(a.scene, err);
  const Scene<float> scene = load_checkpoint(a.checkpoint);
  check_scene_dim(scene, data);
  EvalOptions opts;
  opts.objective.raster.traversal = parse_traversal(a.traversal);
  opts.objective.raster.threads = s.threads;
  opts.objective.ndfd.activation.slope = a.k;
  opts.objective.ndfd.activation.threshold = a.sim_threshold;
  opts.objective.ndfd.activation.validate();
  opts.fl1_normalize = a.fl1_normalize;
  const EvalReport report = evaluate(scene, data, opts);
  emit_report(report, a.out);
  out << std::setprecision(6) << "views " << report.views.size() << "  primitives " << report.primitives << "\n";
  if (report.mean_psnr)
    out << "mean psnr " << *report.mean_psnr << "  fe " << *report.mean_fe << "  fl1 " << *report.mean_fl1 << "\n";
  out << "report " << a.out << "\n";
  return kExitOk;
}

int do_check_grad(const CliState& s, std::ostream& out, std::ostream& err) {
  const CheckGradArgs& a = s.check_grad;
  if (a.n_probes <= 0) throw UsageError("--n-probes must be positive");
  if (!(a.tolerance > 0)) throw UsageError("--tolerance must be positive");
  if (a.primitives <= 0) throw UsageError("--primitives must be positive");
  const SceneInit data = load_checked(a.scene, err);
  if (data.view_count() == 0) throw UsageError("dataset has no views");
  const int view_pos = a.view < 0 ? 0 : data.find_view(a.view);
  if (view_pos < 0) throw UsageError("unknown view " + std::to_string(a.view));
  const Camera& cam = data.cameras[static_cast<std::size_t>(view_pos)];

  Scene<float> full;
  if (a.checkpoint.empty()) {
    InitConfig ic;
    ic.seed = a.seed;
    full = initialize_scene(data, ic);
  } else {
    full = load_checkpoint(a.checkpoint);
    check_scene_dim(full, data);
  }
  // Random subset among primitives whose center lands in the probed view.
  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(a.seed);
  std::shuffle(order.begin(), order.end(), rng);
  Scene<float> subset;
  subset.feature_dim = full.feature_dim;
  for (std::size_t i : order) {
    if (static_cast<int>(subset.size()) >= a.primitives) break;
    if (observe(cam, full.primitives[i].position.cast<double>()))
      subset.primitives.push_back(full.primitives[i]);
  }
  ObjectiveOptions opts;
  opts.raster.traversal = parse_traversal(a.traversal);
  opts.raster.threads = s.threads;
  opts.weights = weights_for(parse_loss_selector(a.loss));
  FdOptions fd;
  fd.probes = static_cast<std::size_t>(a.n_probes);
  fd.tolerance = a.tolerance;
  fd.seed = a.seed;
  const FdReport report = fd_check(subset.cast<double>(), cam, data.images[static_cast<std::size_t>(view_pos)],
                                   data.features[static_cast<std::size_t>(view_pos)], opts, fd);
  out << "loss " << a.loss << ", " << subset.size() << " primitives, view " << cam.id << "\n" << report.to_text();
  return report.passed ? kExitOk : kExitInternal;
}

std::string config_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_null()) return v.dump();
  throw CLI::ConversionError("config values must be scalars or arrays of scalars");
}

/// Splices the flags stored in a `--config` JSON file right after the
/// subcommand name. Later occurrences win, so explicit flags override them.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const CLI::App& app) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CLI::ConversionError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw CLI::ConversionError("config file " + path + " must hold a JSON object");

  std::vector<std::string> injected;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") throw CLI::ConversionError("config files cannot include other config files");
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      injected.push_back(flag + "=" + config_scalar(value));
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + config_scalar(v);
      injected.push_back(flag);
      injected.push_back(joined);
    } else {
      injected.push_back(flag);
      injected.push_back(config_scalar(value));
    }
  }

  std::vector<std::string> out;
  bool placed = false;
  for (const std::string& a : args) {
    out.push_back(a);
    if (!placed && app.get_subcommand_no_throw(a) != nullptr) {
      out.insert(out.end(), injected.begin(), injected.end());
      placed = true;
    }
  }
  if (!placed) out.insert(out.begin(), injected.begin(), injected.end());
  return out;
}

}  // namespace

std::string cli_help(const std::string& subcommand) {
  CliState state;
  auto app = make_app(state);
  if (subcommand.empty()) return app->help();
  return app->get_subcommand(subcommand)->help();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliState state;
  auto app = make_app(state);
  try {
    const std::vector<std::string> expanded = expand_config(args, *app);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app->parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = app.get();
    for (const CLI::App* sub : app->get_subcommands()) target = sub;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app->help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (e.get_exit_code() == 0) return kExitOk;
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    const std::string name = app->get_subcommands().front()->get_name();
    if (name == "synth") return do_synth(state, out);
    if (name == "train") return do_train(state, out, err);
    if (name == "render") return do_render(state, out, err);
    if (name == "eval") return do_eval(state, out, err);
    if (name == "check-grad") return do_check_grad(state, out, err);
    err << "error: unhandled subcommand " << name << "\n";
    return kExitInternal;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidParameter& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace fhgs
