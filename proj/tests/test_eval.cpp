#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "peerfx/cli.hpp"
#include "peerfx/eval.hpp"

using namespace peerfx;
namespace fs = std::filesystem;

namespace {

DatasetSpec bench_spec(int n) {
  DatasetSpec spec;
  spec.n = n;
  spec.d = 3;
  spec.graph.param = 10.0 / n;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("aggregation arithmetic", "[eval]") {
  SECTION("constant sequence has zero std") {
    std::vector<RunRecord> runs(5);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      runs[i].seed = i;
      runs[i].pe = 0.3;
      runs[i].abs_bias = 0.2;
      runs[i].rel_bias = 40.0;
    }
    const ReportRow row = detail::aggregate_runs("X", 0.0, runs);
    REQUIRE(row.mean_pe == Approx(0.3));
    REQUIRE(row.std_pe == 0.0);
    REQUIRE(row.std_abs == 0.0);
  }

  SECTION("mean and sample std match an independent computation") {
    // Values centered on the 0.3311-style reporting example.
    const std::vector<double> pes = {0.3311, 0.30, 0.36, 0.33, 0.325};
    std::vector<RunRecord> runs(pes.size());
    for (std::size_t i = 0; i < pes.size(); ++i) {
      runs[i].pe = pes[i];
      runs[i].abs_bias = std::abs(pes[i] - 0.5);
      runs[i].rel_bias = runs[i].abs_bias / 0.5 * 100.0;
    }
    const ReportRow row = detail::aggregate_runs("X", 0.0, runs);

    double mean = 0.0;
    for (double p : pes) mean += p;
    mean /= static_cast<double>(pes.size());
    double ss = 0.0;
    for (double p : pes) ss += (p - mean) * (p - mean);
    const double sd = std::sqrt(ss / (static_cast<double>(pes.size()) - 1.0));
    REQUIRE(row.mean_pe == Approx(mean).margin(1e-12));
    REQUIRE(row.std_pe == Approx(sd).margin(1e-12));
  }
}

TEST_CASE("repeat", "[eval]") {
  SECTION("one seed is rejected") {
    REQUIRE_THROWS_AS(repeat(EstimatorSpec::from_name("naive"), bench_spec(200),
                             {1}),
                      std::invalid_argument);
  }

  SECTION("aggregates are recomputable from the per-run records") {
    std::vector<RunRecord> runs;
    const ReportRow row = repeat(EstimatorSpec::from_name("naive"),
                                 bench_spec(400), {1, 2, 3}, &runs);
    REQUIRE(runs.size() == 3);
    double mean = 0.0;
    for (const auto& r : runs) mean += r.abs_bias;
    mean /= 3.0;
    REQUIRE(row.mean_abs == Approx(mean).margin(1e-15));
  }

  SECTION("failures identify the seed") {
    DatasetSpec bad = bench_spec(200);
    bad.graph.model = GraphSpec::Model::from_file;
    bad.graph.path = "/nonexistent/file.txt";
    REQUIRE_THROWS_WITH(
        repeat(EstimatorSpec::from_name("naive"), bad, {7, 8}),
        Catch::Contains("seed 7"));
  }

  SECTION("parallel execution matches serial") {
    std::vector<RunRecord> serial_runs, par_runs;
    const ReportRow serial = repeat(EstimatorSpec::from_name("2sls"),
                                    bench_spec(400), {1, 2, 3, 4},
                                    &serial_runs, 1);
    const ReportRow par = repeat(EstimatorSpec::from_name("2sls"),
                                 bench_spec(400), {1, 2, 3, 4}, &par_runs, 3);
    REQUIRE(serial.mean_abs == par.mean_abs);
    REQUIRE(serial.std_abs == par.std_abs);
    for (std::size_t i = 0; i < serial_runs.size(); ++i) {
      REQUIRE(serial_runs[i].pe == par_runs[i].pe);
    }
  }
}

TEST_CASE("lambda_sweep", "[eval]") {
  SECTION("grid validation") {
    const EstimatorSpec dig = EstimatorSpec::from_name("dig2rsi");
    REQUIRE_THROWS_AS(lambda_sweep(bench_spec(200), {}, dig, {1, 2}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(lambda_sweep(bench_spec(200), {-0.01}, dig, {1, 2}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(lambda_sweep(bench_spec(200), {0.0},
                                   EstimatorSpec::from_name("naive"), {1, 2}),
                      std::invalid_argument);
  }

  SECTION("paired datasets across grid points") {
    // The dataset depends only on (spec, seed), not the sweep value.
    const DatasetSpec spec = bench_spec(300);
    REQUIRE(dataset_hash(gen_dataset(spec, 5)) ==
            dataset_hash(gen_dataset(spec, 5)));
  }

  SECTION("single-point grid equals a plain repeat") {
    EstimatorSpec dig = EstimatorSpec::from_name("dig2rsi");
    dig.stage1.epochs = 10;
    dig.stage2.train.epochs = 10;
    dig.stage2.lambda_a = 0.0;
    const DatasetSpec spec = bench_spec(250);
    const BenchmarkReport sweep =
        lambda_sweep(spec, {0.0}, dig, {1, 2});
    const ReportRow direct = repeat(dig, spec, {1, 2});
    REQUIRE(sweep.rows.size() == 1);
    REQUIRE(sweep.rows[0].mean_abs == direct.mean_abs);
    REQUIRE(sweep.rows[0].mean_pe == direct.mean_pe);
  }
}

TEST_CASE("confounder_sweep", "[eval]") {
  SECTION("validation") {
    const std::vector<EstimatorSpec> ests = {EstimatorSpec::from_name("naive")};
    REQUIRE_THROWS_AS(confounder_sweep(bench_spec(200), {}, ests, {1, 2}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(confounder_sweep(bench_spec(200), {-1.0}, ests, {1, 2}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(confounder_sweep(bench_spec(200), {0.0}, {}, {1, 2}),
                      std::invalid_argument);
  }

  SECTION("naive bias grows with confounder strength") {
    const std::vector<EstimatorSpec> ests = {EstimatorSpec::from_name("naive")};
    const BenchmarkReport rep = confounder_sweep(
        bench_spec(3000), {0.0, 0.5, 1.0, 2.0}, ests, {1, 2, 3, 4, 5});
    REQUIRE(rep.rows.size() == 4);
    for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k) {
      REQUIRE(rep.rows[k].mean_abs <= rep.rows[k + 1].mean_abs);
    }
    // Unconfounded and IV-consistent estimators agree at strength 0.
    const BenchmarkReport both = confounder_sweep(
        bench_spec(3000), {0.0},
        {EstimatorSpec::from_name("naive"), EstimatorSpec::from_name("2sls")},
        {1, 2, 3, 4, 5});
    REQUIRE(std::abs(both.rows[0].mean_abs - both.rows[1].mean_abs) < 0.05);
  }
}

TEST_CASE("csv emission is deterministic", "[eval]") {
  const std::vector<EstimatorSpec> ests = {EstimatorSpec::from_name("naive"),
                                           EstimatorSpec::from_name("2sls")};
  const BenchmarkReport a = benchmark(ests, bench_spec(300), {1, 2, 3});
  const BenchmarkReport b = benchmark(ests, bench_spec(300), {1, 2, 3});
  REQUIRE(aggregate_csv(a) == aggregate_csv(b));
  REQUIRE(runs_csv(a) == runs_csv(b));
  REQUIRE(aggregate_csv(a).find("Naive,") != std::string::npos);
  REQUIRE(runs_csv(a).find("2SLS,") != std::string::npos);
}

TEST_CASE("parallel_for propagates worker exceptions", "[eval]") {
  REQUIRE_THROWS_AS(parallel_for(8, 3,
                                 [](std::size_t i) {
                                   if (i == 5) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}
