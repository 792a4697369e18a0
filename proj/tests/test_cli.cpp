#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "peerfx/io.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef PEERFX_CLI
#error "PEERFX_CLI must point at the built command-line binary"
#endif

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(PEERFX_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("peerfx_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path path = dir / "run.cfg";
  std::ofstream os(path);
  os << "[graph]\nn = 300\np = 0.0333\n"
     << "[stage1]\nepochs = 8\n[stage2]\nepochs = 8\n"
     << "[run]\nestimators = naive,2sls\nseeds = 1,2\n"
     << extra;
  os.close();
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("cli exit codes", "[cli]") {
  const fs::path dir = temp_dir("codes");
  const fs::path cfg = write_config(dir);

  SECTION("generate then estimate succeeds") {
    REQUIRE(run_cli("generate --config " + cfg.string() + " --out " +
                    (dir / "ds").string()) == 0);
    REQUIRE(run_cli("estimate --config " + cfg.string() + " --dataset " +
                    (dir / "ds").string() + " --estimator 2sls --out " +
                    (dir / "res").string()) == 0);
    REQUIRE(fs::exists(dir / "res" / "2sls_result.txt"));
  }

  SECTION("unknown estimator exits 2") {
    run_cli("generate --config " + cfg.string() + " --out " +
            (dir / "ds2").string());
    REQUIRE(run_cli("estimate --config " + cfg.string() + " --dataset " +
                    (dir / "ds2").string() + " --estimator ces --out " +
                    (dir / "r").string()) == 2);
  }

  SECTION("invalid config exits 2") {
    const fs::path bad = dir / "bad.cfg";
    std::ofstream os(bad);
    os << "[sem]\nbeta = 1.5\n";
    os.close();
    REQUIRE(run_cli("generate --config " + bad.string() + " --out " +
                    (dir / "x").string()) == 2);
  }

  SECTION("unknown sweep kind exits 2") {
    REQUIRE(run_cli("sweep --config " + cfg.string() +
                    " --kind quadratic --out " + (dir / "s").string()) == 2);
  }

  SECTION("single-seed benchmark exits 2") {
    REQUIRE(run_cli("benchmark --config " + cfg.string() +
                    " --seed-override 1 --out " + (dir / "b").string()) == 2);
  }

  SECTION("missing dataset exits 1") {
    REQUIRE(run_cli("estimate --config " + cfg.string() +
                    " --dataset /nonexistent --estimator naive --out " +
                    (dir / "r2").string()) == 1);
  }
}

TEST_CASE("generate produces byte-identical datasets", "[cli]") {
  const fs::path dir = temp_dir("gen_bytes");
  const fs::path cfg = write_config(dir);
  REQUIRE(run_cli("generate --config " + cfg.string() + " --out " +
                  (dir / "a").string()) == 0);
  REQUIRE(run_cli("generate --config " + cfg.string() + " --out " +
                  (dir / "b").string()) == 0);
  for (const char* name : {"graph.txt", "X.csv", "Y.csv", "truth.json"}) {
    REQUIRE(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
}

TEST_CASE("estimate on a dataset without truth reports no bias", "[cli]") {
  const fs::path dir = temp_dir("no_truth");
  const fs::path cfg = write_config(dir);
  REQUIRE(run_cli("generate --config " + cfg.string() + " --out " +
                  (dir / "ds").string()) == 0);
  fs::remove(dir / "ds" / "truth.json");
  REQUIRE(run_cli("estimate --config " + cfg.string() + " --dataset " +
                  (dir / "ds").string() + " --estimator naive --out " +
                  (dir / "res").string()) == 0);
  const std::string text = slurp(dir / "res" / "naive_result.txt");
  REQUIRE(text.find("pe_hat = ") != std::string::npos);
  REQUIRE(text.find("abs_bias") == std::string::npos);
}

TEST_CASE("benchmark emits identical csv bytes across runs", "[cli]") {
  const fs::path dir = temp_dir("bench_bytes");
  const fs::path cfg = write_config(dir);
  REQUIRE(run_cli("benchmark --config " + cfg.string() + " --out " +
                  (dir / "a").string()) == 0);
  REQUIRE(run_cli("benchmark --config " + cfg.string() + " --out " +
                  (dir / "b").string()) == 0);
  REQUIRE(slurp(dir / "a" / "benchmark.csv") ==
          slurp(dir / "b" / "benchmark.csv"));
  REQUIRE(slurp(dir / "a" / "benchmark_runs.csv") ==
          slurp(dir / "b" / "benchmark_runs.csv"));
}

TEST_CASE("sweep subcommand writes long-format csv", "[cli]") {
  const fs::path dir = temp_dir("sweep");
  const fs::path cfg = write_config(
      dir, "[sweep]\nlambda_grid = 0,0.01\nstrengths = 0,1\n");

  REQUIRE(run_cli("sweep --config " + cfg.string() + " --kind lambda_a --out " +
                  (dir / "la").string()) == 0);
  const std::string agg = slurp(dir / "la" / "lambda_sweep.csv");
  REQUIRE(agg.find("sweep_value") != std::string::npos);
  REQUIRE(agg.find("DIG2RSI,0,") != std::string::npos);
  const std::string runs = slurp(dir / "la" / "lambda_sweep_runs.csv");
  REQUIRE(runs.find("estimator,sweep_value,seed,pe,abs_bias,rel_bias") !=
          std::string::npos);

  REQUIRE(run_cli("sweep --config " + cfg.string() +
                  " --kind confounder --out " + (dir / "cs").string()) == 0);
  REQUIRE(fs::exists(dir / "cs" / "confounder_sweep.csv"));
  REQUIRE(fs::exists(dir / "cs" / "confounder_sweep_runs.csv"));
}

TEST_CASE("real-world style ingestion without generation", "[cli]") {
  // Build an edge list + feature/outcome CSVs by hand, as an external
  // dataset would arrive, then estimate on it.
  const fs::path dir = temp_dir("ingest");
  const fs::path ds = dir / "ds";
  fs::create_directories(ds);

  peerfx::Rng rng(5);
  const int n = 200;
  peerfx::EdgeList edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(0.04)) edges.emplace_back(i, j);
    }
  }
  const auto g = peerfx::SparseGraph::from_edge_list(edges, n);
  const peerfx::Matrix x =
      peerfx::Matrix::NullaryExpr(n, 2, [&]() { return rng.normal(); });
  const peerfx::Vector y =
      peerfx::Vector::NullaryExpr(n, [&]() { return rng.normal(); });
  {
    std::ostringstream os;
    peerfx::write_edge_list(os, g);
    peerfx::atomic_write(ds / "graph.txt", os.str());
  }
  peerfx::atomic_write(ds / "X.csv", peerfx::feature_csv(x, "x"));
  peerfx::atomic_write(ds / "Y.csv", peerfx::feature_csv(y, "y"));

  const fs::path cfg = write_config(dir);
  REQUIRE(run_cli("estimate --config " + cfg.string() + " --dataset " +
                  ds.string() + " --estimator 2sls --out " +
                  (dir / "res").string()) == 0);
  const std::string text = slurp(dir / "res" / "2sls_result.txt");
  REQUIRE(text.find("pe_hat = ") != std::string::npos);
  REQUIRE(text.find("abs_bias") == std::string::npos);
}
