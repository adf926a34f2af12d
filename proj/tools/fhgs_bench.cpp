#include "fhgs/bench.hpp"
#include "fhgs/common.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app("Per-pixel scaling benchmark of the clustering loss and the backward sweep.", "fhgs_bench");
  app.option_defaults()->always_capture_default();
  std::vector<std::size_t> sizes = {64, 256, 1024, 4096};
  fhgs::BenchOptions options;
  std::string out;
  bool skip_backward = false;
  app.add_option("--sizes", sizes, "Fragment counts per pixel (strictly increasing, at least 4)")->delimiter(',');
  app.add_option("--reps", options.repetitions, "Timed repetitions per size (median reported)");
  app.add_option("--warmup", options.warmup, "Untimed warmup repetitions");
  app.add_option("--feature-dim", options.feature_dim, "Feature dimension");
  app.add_option("--seed", options.seed, "Random seed for the fragment lists");
  app.add_option("--out", out, "CSV output path (stdout only if empty)");
  app.add_flag("--skip-backward", skip_backward, "Only time the clustering loss");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    std::vector<fhgs::BenchResult> results;
    auto [linear, brute] = fhgs::bench_lcf(sizes, options);
    results.push_back(linear);
    results.push_back(brute);
    if (!skip_backward) {
      auto [fwd, bwd] = fhgs::bench_backward(sizes, options);
      results.push_back(fwd);
      results.push_back(bwd);
    }
    std::cout << fhgs::bench_csv(results);
    std::cout << std::setprecision(4);
    for (const auto& r : results) std::cout << "# " << r.name << " exponent " << r.exponent << "\n";
    std::cout << "# linear vs bruteforce max relative difference " << linear.max_rel_diff << "\n";
    if (!out.empty()) fhgs::write_bench_csv(out, results);
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
