#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fhgs {

struct BenchRow {
  std::string name;
  std::size_t n = 0;
  int repetitions = 0;
  double median_ns = 0;
};

struct BenchResult {
  std::string name;
  std::vector<BenchRow> rows;
  /// Least-squares slope of log(median) against log(N).
  double exponent = 0;
  /// Largest relative disagreement with the reference path (0 when not cross-checked).
  double max_rel_diff = 0;
};

struct BenchOptions {
  int repetitions = 7;
  int warmup = 2;
  int feature_dim = 16;
  std::uint64_t seed = 1;
  /// Each timed sample repeats the operation until roughly this many
  /// elementary steps have run, so tiny inputs are not lost in timer noise.
  double work_per_sample = 4e6;
};

/// Slope of the least-squares line through (log x, log y). Needs >= 2 points.
double fit_exponent(const std::vector<double>& x, const std::vector<double>& y);

/// Times the linear clustering-loss traversal and the pairwise reference on
/// identical random fragment lists. Sizes must be strictly increasing with at
/// least four entries. Returns (linear, bruteforce).
std::pair<BenchResult, BenchResult> bench_lcf(const std::vector<std::size_t>& sizes,
                                              const BenchOptions& options = {});

/// Times the per-pixel forward traversal (compositing, both feature losses)
/// and its backward sweep (dL/dw and dL/dalpha). Returns (forward, backward).
std::pair<BenchResult, BenchResult> bench_backward(const std::vector<std::size_t>& sizes,
                                                   const BenchOptions& options = {});

std::string bench_csv(const std::vector<BenchResult>& results);
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results);

}  // namespace fhgs
