#pragma once

#include "fhgs/backward.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fhgs {

/// Reported for an exact match, where the true value is infinite.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all pixels and channels; values assumed in [0, 1].
template <typename Real>
double psnr(const Image<Real>& rendered, const Image<float>& gt);

/// Mean over pixels and channels of |rendered - gt|. `rendered` holds the
/// unnormalized sum of w_i f_i unless normalize is set, in which case each
/// nonzero rendered pixel is first scaled to unit length.
template <typename Real>
double fl1(const Image<Real>& rendered, const FeatureMap& gt, bool normalize = false);

/// Mean over every pixel of every view of the per-pixel L_gt value.
template <typename Real>
double fe(const Scene<Real>& scene, const SceneInit& data, const ObjectiveOptions& options);

struct ViewMetrics {
  int view_id = 0;
  double psnr = 0;
  double fe = 0;
  double fl1 = 0;

  friend bool operator==(const ViewMetrics&, const ViewMetrics&) = default;
};

struct EvalReport {
  std::vector<ViewMetrics> views;
  /// Arithmetic means over views; empty when there are no views.
  std::optional<double> mean_psnr;
  std::optional<double> mean_fe;
  std::optional<double> mean_fl1;
  std::size_t primitives = 0;
  double seconds = 0;

  /// Recomputes the means from the per-view rows.
  void finalize();

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalOptions {
  ObjectiveOptions objective;
  bool fl1_normalize = false;
};

template <typename Real>
EvalReport evaluate(const Scene<Real>& scene, const SceneInit& data, const EvalOptions& options);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Writes `path` (JSON, fixed key order) and a sibling CSV with the same stem
/// whose header is view_id,psnr,fe,fl1.
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport parse_report(const std::filesystem::path& path);

}  // namespace fhgs
