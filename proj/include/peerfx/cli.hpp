#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "peerfx/config.hpp"
#include "peerfx/eval.hpp"
#include "peerfx/io.hpp"

namespace peerfx {

// Exit-code contract: 0 success, 1 runtime failure, 2 configuration or
// usage error. The cmd_* functions run a fully parsed configuration; usage
// errors are raised as ConfigError for the frontend to map to 2.

inline int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.seeds.front();
  const Dataset ds = gen_dataset(cfg.dataset, seed);
  save_dataset(ds, out_dir);
  std::cout << "dataset: n=" << ds.n() << " d=" << ds.d()
            << " edges=" << ds.graph.num_edges()
            << " isolated=" << ds.graph.num_isolated()
            << " spectral_bound=" << fmt17(ds.graph.spectral_radius_upper_bound())
            << " seed=" << seed << "\n";
  if (ds.truth) std::cout << "truth: beta=" << fmt17(ds.truth->beta) << "\n";
  std::cout << "wrote " << out_dir << "\n";
  return 0;
}

inline int cmd_estimate(const RunConfig& cfg, const std::string& dataset_dir,
                        const std::string& estimator,
                        const std::string& out_dir) {
  EstimatorSpec spec;
  try {
    spec = cfg.estimator_spec(estimator);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const Dataset ds = load_dataset(dataset_dir);
  const EstimationResult res = run_estimator(spec, ds, cfg.seeds.front());

  std::filesystem::create_directories(out_dir);
  const auto path =
      std::filesystem::path(out_dir) / (estimator + "_result.txt");
  save_result(res, path, /*with_per_node_csv=*/true);

  std::cout << res.estimator << ": pe_hat=" << fmt17(res.pe_hat);
  if (res.abs_bias) {
    std::cout << " abs_bias=" << fmt17(*res.abs_bias)
              << " rel_bias=" << fmt17(*res.rel_bias) << "%";
  }
  std::cout << "\nwrote " << path.string() << "\n";
  return 0;
}

inline int cmd_benchmark(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.estimators.empty()) {
    throw ConfigError("benchmark needs run.estimators");
  }
  if (cfg.seeds.size() < 2) {
    throw ConfigError("benchmark needs >= 2 seeds for a defined std");
  }
  const BenchmarkReport report = benchmark(cfg.estimator_specs(), cfg.dataset,
                                           cfg.seeds, cfg.threads);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  atomic_write(dir / "benchmark.csv", aggregate_csv(report));
  atomic_write(dir / "benchmark_runs.csv", runs_csv(report));
  std::cout << report_table(report);
  std::cout << "wrote " << (dir / "benchmark.csv").string() << "\n";
  return 0;
}

inline int cmd_sweep(const RunConfig& cfg, const std::string& kind,
                     const std::string& out_dir) {
  if (cfg.seeds.size() < 2) {
    throw ConfigError("sweeps need >= 2 seeds for a defined std");
  }
  BenchmarkReport report;
  std::string stem;
  if (kind == "lambda_a") {
    report = lambda_sweep(cfg.dataset, cfg.lambda_grid,
                          cfg.estimator_spec("dig2rsi"), cfg.seeds,
                          cfg.threads);
    stem = "lambda_sweep";
  } else if (kind == "confounder") {
    if (cfg.estimators.empty()) {
      throw ConfigError("confounder sweep needs run.estimators");
    }
    report = confounder_sweep(cfg.dataset, cfg.strengths,
                              cfg.estimator_specs(), cfg.seeds, cfg.threads);
    stem = "confounder_sweep";
  } else {
    throw ConfigError("unknown sweep kind '" + kind +
                      "'; supported: lambda_a, confounder");
  }
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  atomic_write(dir / (stem + ".csv"),
               aggregate_csv(report, /*with_sweep_column=*/true));
  atomic_write(dir / (stem + "_runs.csv"), runs_csv(report));
  std::cout << report_table(report);
  std::cout << "wrote " << (dir / (stem + ".csv")).string() << "\n";
  return 0;
}

}  // namespace peerfx
