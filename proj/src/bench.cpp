#include "fhgs/bench.hpp"

#include "fhgs/backward.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

namespace fhgs {
namespace {

void check_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 4) throw UsageError("benchmarks need at least four sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw UsageError("benchmark sizes must be strictly increasing");
}

/// Random fragment list with unit features, far-to-near.
struct FragmentList {
  std::vector<double> features;
  std::vector<WeightedFeature<double>> items;
  std::vector<Fragment<double>> fragments;
  std::vector<Vec3<double>> colors;
};

FragmentList make_list(std::size_t n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  FragmentList list;
  list.features.resize(n * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double* f = list.features.data() + i * d;
    double sq = 0;
    for (int c = 0; c < d; ++c) {
      f[c] = normal(rng);
      sq += f[c] * f[c];
    }
    for (int c = 0; c < d; ++c) f[c] /= std::sqrt(sq);
  }
  for (std::size_t i = 0; i < n; ++i) {
    list.items.push_back({uniform(rng) / double(n), uniform(rng), list.features.data() + i * d});
    Fragment<double> frag;
    frag.alpha = 0.001 + 0.01 * uniform(rng);
    frag.primitive = static_cast<std::uint32_t>(i);
    list.fragments.push_back(frag);
    list.colors.emplace_back(uniform(rng), uniform(rng), uniform(rng));
  }
  return list;
}

/// Median wall time of one call of `op`, in nanoseconds.
double time_median(const std::function<void()>& op, std::size_t inner, const BenchOptions& options) {
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < options.warmup; ++i) op();
  std::vector<double> samples;
  for (int r = 0; r < options.repetitions; ++r) {
    const auto t0 = clock::now();
    for (std::size_t k = 0; k < inner; ++k) op();
    samples.push_back(std::chrono::duration<double, std::nano>(clock::now() - t0).count() / double(inner));
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

std::size_t inner_count(double work_per_call, const BenchOptions& options) {
  return static_cast<std::size_t>(std::max(1.0, std::ceil(options.work_per_sample / std::max(work_per_call, 1.0))));
}

void finish(BenchResult& r) {
  std::vector<double> x, y;
  for (const auto& row : r.rows) {
    x.push_back(double(row.n));
    y.push_back(row.median_ns);
  }
  r.exponent = fit_exponent(x, y);
}

volatile double g_sink = 0;

}  // namespace

double fit_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("fit_exponent: need at least two points");
  double mx = 0, my = 0;
  const double n = double(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw UsageError("fit_exponent: sizes must differ");
  return sxy / sxx;
}

std::pair<BenchResult, BenchResult> bench_lcf(const std::vector<std::size_t>& sizes,
                                              const BenchOptions& options) {
  check_sizes(sizes);
  if (options.repetitions < 5) throw UsageError("benchmarks need at least five repetitions");
  std::mt19937_64 rng(options.seed);
  const int d = options.feature_dim;
  BenchResult linear{"lcf_linear", {}, 0, 0}, brute{"lcf_bruteforce", {}, 0, 0};
  for (std::size_t n : sizes) {
    const FragmentList list = make_list(n, d, rng);
    const std::span<const WeightedFeature<double>> items(list.items);
    const double a = lcf_linear(items, d), b = lcf_bruteforce(items, d);
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    linear.max_rel_diff = std::max(linear.max_rel_diff, std::abs(a - b) / scale);

    const double lin_ns = time_median([&] { g_sink = g_sink + lcf_linear(items, d); },
                                      inner_count(double(n) * d, options), options);
    const double bf_ns = time_median([&] { g_sink = g_sink + lcf_bruteforce(items, d); },
                                     inner_count(double(n) * n * d / 2, options), options);
    linear.rows.push_back({linear.name, n, options.repetitions, lin_ns});
    brute.rows.push_back({brute.name, n, options.repetitions, bf_ns});
  }
  brute.max_rel_diff = linear.max_rel_diff;
  finish(linear);
  finish(brute);
  return {linear, brute};
}

std::pair<BenchResult, BenchResult> bench_backward(const std::vector<std::size_t>& sizes,
                                                   const BenchOptions& options) {
  check_sizes(sizes);
  if (options.repetitions < 5) throw UsageError("benchmarks need at least five repetitions");
  std::mt19937_64 rng(options.seed);
  const int d = options.feature_dim;
  BenchResult forward{"pixel_forward", {}, 0, 0}, backward{"pixel_backward", {}, 0, 0};
  for (std::size_t n : sizes) {
    FragmentList list = make_list(n, d, rng);
    const Vec3<double> background(0.1, 0.2, 0.3), dl_dcolor(0.3, -0.2, 0.1);
    AccumulatorState<double> state(d);
    std::vector<double> dl_dw_cf(n), dl_dw(n), dl_dalpha(n);

    // Blend weights, then both feature losses over the far-to-near list.
    auto run_forward = [&] {
      const auto px = composite_pixel<double>(list.fragments, list.colors, {}, background);
      state.reset(d);
      for (std::size_t k = 0; k < n; ++k) {
        WeightedFeature<double>& item = list.items[k];
        item.w = list.fragments[n - 1 - k].w;
        accumulate_lgt(state, item);
        accumulate_lcf(state, item);
      }
      g_sink = g_sink + px.color[0] + state.lcf;
    };
    auto run_backward = [&] {
      grad_w_lcf<double>(list.items, state, dl_dw_cf);
      for (std::size_t i = 0; i < n; ++i)
        dl_dw[i] = dl_dcolor.dot(list.colors[i]) + list.items[n - 1 - i].sigma + 0.1 * dl_dw_cf[n - 1 - i];
      grad_alpha<double>(list.fragments, dl_dw, dl_dcolor.dot(background), 0.5, dl_dalpha);
      g_sink = g_sink + dl_dalpha[0];
    };
    run_forward();
    const std::size_t inner = inner_count(double(n) * d, options);
    forward.rows.push_back({forward.name, n, options.repetitions, time_median(run_forward, inner, options)});
    backward.rows.push_back({backward.name, n, options.repetitions, time_median(run_backward, inner, options)});
  }
  finish(forward);
  finish(backward);
  return {forward, backward};
}

std::string bench_csv(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os.precision(10);
  os << "case,n,repetitions,median_ns,exponent\n";
  for (const auto& r : results)
    for (const auto& row : r.rows)
      os << row.name << ',' << row.n << ',' << row.repetitions << ',' << row.median_ns << ',' << r.exponent << '\n';
  return os.str();
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchResult>& results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError(path.string() + ": cannot open file for writing");
  out << bench_csv(results);
}

}  // namespace fhgs
