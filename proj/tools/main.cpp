#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "peerfx/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "peerfx: peer-effect estimation in networks under simultaneous "
      "feedback and hidden confounding"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::vector<std::uint64_t> seed_override;
  int threads_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration file")
        ->required();
    sub->add_option("--out", out_override, "output directory override");
    sub->add_option("--seed-override", seed_override,
                    "replace the config seed list");
    sub->add_option("--threads", threads_override,
                    "worker thread count override");
  };

  auto* generate =
      app.add_subcommand("generate", "write a synthetic dataset directory");
  add_common(generate);

  auto* estimate =
      app.add_subcommand("estimate", "run one estimator on a dataset");
  std::string dataset_dir, estimator;
  add_common(estimate);
  estimate->add_option("--dataset", dataset_dir, "dataset directory")
      ->required();
  estimate->add_option("--estimator", estimator,
                       "dig2rsi | dl2sls | 2sls | fn-iv | loo | naive")
      ->required();

  auto* bench = app.add_subcommand(
      "benchmark", "multi-seed bias comparison across estimators");
  add_common(bench);

  auto* sweep = app.add_subcommand("sweep", "lambda_a or confounder sweep");
  std::string sweep_kind;
  add_common(sweep);
  sweep->add_option("--kind", sweep_kind, "lambda_a | confounder")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    peerfx::RunConfig cfg = peerfx::load_config(config_path);
    if (!seed_override.empty()) cfg.seeds = seed_override;
    if (threads_override > 0) cfg.threads = threads_override;
    const std::string out = out_override.empty() ? cfg.out_dir : out_override;

    if (app.got_subcommand(generate)) return peerfx::cmd_generate(cfg, out);
    if (app.got_subcommand(estimate)) {
      return peerfx::cmd_estimate(cfg, dataset_dir, estimator, out);
    }
    if (app.got_subcommand(bench)) return peerfx::cmd_benchmark(cfg, out);
    if (app.got_subcommand(sweep)) return peerfx::cmd_sweep(cfg, sweep_kind, out);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const peerfx::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
