#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "peerfx/baselines.hpp"
#include "peerfx/dig2rsi.hpp"
#include "peerfx/io.hpp"
#include "peerfx/result.hpp"
#include "peerfx/sem.hpp"

namespace peerfx {

// Index-parallel map with deterministic result placement. Exceptions from
// workers are rethrown on the caller thread.
inline void parallel_for(std::size_t count, int threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min<int>(threads, static_cast<int>(count));
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// One estimator choice, resolvable from its CLI name.
struct EstimatorSpec {
  enum class Kind { naive, tsls, fn_iv, loo, dl2sls, dig2rsi };
  Kind kind = Kind::dig2rsi;
  TrainConfig stage1;            // neural stage-1 (dig2rsi, dl-2sls)
  TrainConfig dl_stage2;         // dl-2sls outcome net
  Stage2Config stage2;           // dig2rsi stage-2
  LinearIvSpec iv;               // linear estimators

  static EstimatorSpec from_name(const std::string& name) {
    EstimatorSpec spec;
    if (name == "naive") {
      spec.kind = Kind::naive;
    } else if (name == "2sls") {
      spec.kind = Kind::tsls;
      spec.iv.source = InstrumentSource::second_order;
    } else if (name == "fn-iv") {
      spec.kind = Kind::fn_iv;
      spec.iv.source = InstrumentSource::first_order_mean;
    } else if (name == "loo") {
      spec.kind = Kind::loo;
      spec.iv.source = InstrumentSource::leave_one_out;
    } else if (name == "dl2sls") {
      spec.kind = Kind::dl2sls;
    } else if (name == "dig2rsi") {
      spec.kind = Kind::dig2rsi;
    } else {
      throw std::invalid_argument(
          "unknown estimator '" + name +
          "'; supported: dig2rsi, dl2sls, 2sls, fn-iv, loo, naive");
    }
    return spec;
  }

  std::string display_name() const {
    switch (kind) {
      case Kind::naive: return "Naive";
      case Kind::tsls: return "2SLS";
      case Kind::fn_iv: return "FN-IV";
      case Kind::loo: return "LOO";
      case Kind::dl2sls: return "DL-2SLS";
      case Kind::dig2rsi: return "DIG2RSI";
    }
    return "?";
  }
};

// Run one estimator on one raw dataset; `seed` drives all training
// randomness (the linear estimators are deterministic given the data).
inline EstimationResult run_estimator(const EstimatorSpec& spec,
                                      const Dataset& raw, std::uint64_t seed) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::naive:
      return naive_ols(raw, spec.iv.use_raw);
    case EstimatorSpec::Kind::tsls:
    case EstimatorSpec::Kind::fn_iv:
    case EstimatorSpec::Kind::loo:
      return tsls(raw, spec.iv);
    case EstimatorSpec::Kind::dl2sls: {
      TrainConfig c1 = spec.stage1;
      c1.seed = splitmix64(seed ^ rng_tag::stage1);
      TrainConfig c2 = spec.dl_stage2;
      c2.seed = splitmix64(seed ^ rng_tag::stage2);
      return dl_2sls(raw, c1, c2, spec.iv.use_raw);
    }
    case EstimatorSpec::Kind::dig2rsi:
      return run_dig2rsi(raw, spec.stage1, spec.stage2, seed);
  }
  throw std::logic_error("unreachable estimator kind");
}

struct RunRecord {
  std::string estimator;
  std::uint64_t seed = 0;
  double sweep_value = 0.0;  // lambda_a or confounder strength; 0 otherwise
  double pe = 0.0;
  double abs_bias = 0.0;
  double rel_bias = 0.0;
  bool has_bias = false;
};

struct ReportRow {
  std::string estimator;
  double sweep_value = 0.0;
  int n_seeds = 0;
  double mean_abs = 0.0, std_abs = 0.0;
  double mean_rel = 0.0, std_rel = 0.0;
  double mean_pe = 0.0, std_pe = 0.0;
};

struct BenchmarkReport {
  std::vector<ReportRow> rows;
  std::vector<RunRecord> runs;
  int n_seeds = 0;
};

namespace detail {

inline void mean_std(const std::vector<double>& xs, double& mean,
                     double& sd) {
  const double n = static_cast<double>(xs.size());
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / (n - 1.0));  // sample standard deviation
}

inline ReportRow aggregate_runs(const std::string& name, double sweep_value,
                                const std::vector<RunRecord>& runs) {
  std::vector<double> abs, rel, pe;
  for (const auto& r : runs) {
    abs.push_back(r.abs_bias);
    rel.push_back(r.rel_bias);
    pe.push_back(r.pe);
  }
  ReportRow row;
  row.estimator = name;
  row.sweep_value = sweep_value;
  row.n_seeds = static_cast<int>(runs.size());
  mean_std(abs, row.mean_abs, row.std_abs);
  mean_std(rel, row.mean_rel, row.std_rel);
  mean_std(pe, row.mean_pe, row.std_pe);
  return row;
}

}  // namespace detail

// Repeat one estimator over seeds, regenerating the dataset each time.
// Aggregates mean and sample std of the bias metrics and the estimate.
inline ReportRow repeat(const EstimatorSpec& spec, const DatasetSpec& dspec,
                        const std::vector<std::uint64_t>& seeds,
                        std::vector<RunRecord>* runs_out = nullptr,
                        int threads = 1, double sweep_value = 0.0) {
  if (seeds.size() < 2) {
    throw std::invalid_argument(
        "repeat needs at least 2 seeds for a defined standard deviation");
  }
  std::vector<RunRecord> runs(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = seeds[i];
    try {
      const Dataset ds = gen_dataset(dspec, seed);
      const EstimationResult res = run_estimator(spec, ds, seed);
      if (!res.abs_bias) {
        throw std::runtime_error("benchmark dataset lost its ground truth");
      }
      RunRecord rec;
      rec.estimator = spec.display_name();
      rec.seed = seed;
      rec.sweep_value = sweep_value;
      rec.pe = res.pe_hat;
      rec.abs_bias = *res.abs_bias;
      rec.rel_bias = *res.rel_bias;
      rec.has_bias = true;
      runs[i] = std::move(rec);
    } catch (const std::exception& e) {
      throw std::runtime_error(spec.display_name() + " failed at seed " +
                               std::to_string(seed) + ": " + e.what());
    }
  });
  if (runs_out) runs_out->insert(runs_out->end(), runs.begin(), runs.end());
  return detail::aggregate_runs(spec.display_name(), sweep_value, runs);
}

inline BenchmarkReport benchmark(const std::vector<EstimatorSpec>& specs,
                                 const DatasetSpec& dspec,
                                 const std::vector<std::uint64_t>& seeds,
                                 int threads = 1) {
  if (specs.empty()) throw std::invalid_argument("no estimators selected");
  BenchmarkReport report;
  report.n_seeds = static_cast<int>(seeds.size());
  for (const auto& spec : specs) {
    report.rows.push_back(repeat(spec, dspec, seeds, &report.runs, threads));
  }
  return report;
}

// One row per adversarial weight, identical datasets across grid points
// (same seeds), so the comparison is paired.
inline BenchmarkReport lambda_sweep(const DatasetSpec& dspec,
                                    const std::vector<double>& grid,
                                    const EstimatorSpec& base,
                                    const std::vector<std::uint64_t>& seeds,
                                    int threads = 1) {
  if (grid.empty()) throw std::invalid_argument("lambda_a grid is empty");
  for (double la : grid) {
    if (la < 0.0) throw std::invalid_argument("lambda_a must be >= 0");
  }
  if (base.kind != EstimatorSpec::Kind::dig2rsi) {
    throw std::invalid_argument("lambda sweep applies to dig2rsi only");
  }
  BenchmarkReport report;
  report.n_seeds = static_cast<int>(seeds.size());
  for (double la : grid) {
    EstimatorSpec spec = base;
    spec.stage2.lambda_a = la;
    report.rows.push_back(
        repeat(spec, dspec, seeds, &report.runs, threads, la));
  }
  return report;
}

// One row per (confounder strength, estimator); lambda and omega move
// together so both channels of the hidden confounder scale.
inline BenchmarkReport confounder_sweep(
    const DatasetSpec& dspec, const std::vector<double>& strengths,
    const std::vector<EstimatorSpec>& specs,
    const std::vector<std::uint64_t>& seeds, int threads = 1) {
  if (strengths.empty()) {
    throw std::invalid_argument("confounder strength list is empty");
  }
  for (double s : strengths) {
    if (s < 0.0) throw std::invalid_argument("strengths must be >= 0");
  }
  if (specs.empty()) throw std::invalid_argument("no estimators selected");
  BenchmarkReport report;
  report.n_seeds = static_cast<int>(seeds.size());
  for (double s : strengths) {
    DatasetSpec d = dspec;
    d.params.lambda_u = s;
    d.params.omega = s;
    for (const auto& spec : specs) {
      report.rows.push_back(repeat(spec, d, seeds, &report.runs, threads, s));
    }
  }
  return report;
}

// Table-style aggregate CSV (one row per estimator / sweep point).
inline std::string aggregate_csv(const BenchmarkReport& report,
                                 bool with_sweep_column = false) {
  std::ostringstream os;
  os << "estimator,";
  if (with_sweep_column) os << "sweep_value,";
  os << "n_seeds,mean_abs_bias,std_abs_bias,mean_rel_bias,std_rel_bias,"
        "mean_pe,std_pe\n";
  for (const auto& r : report.rows) {
    os << r.estimator << ",";
    if (with_sweep_column) os << fmt17(r.sweep_value) << ",";
    os << r.n_seeds << "," << fmt17(r.mean_abs) << "," << fmt17(r.std_abs)
       << "," << fmt17(r.mean_rel) << "," << fmt17(r.std_rel) << ","
       << fmt17(r.mean_pe) << "," << fmt17(r.std_pe) << "\n";
  }
  return os.str();
}

// Long-format per-run CSV (estimator, sweep value, seed, metrics).
inline std::string runs_csv(const BenchmarkReport& report) {
  std::ostringstream os;
  os << "estimator,sweep_value,seed,pe,abs_bias,rel_bias\n";
  for (const auto& r : report.runs) {
    os << r.estimator << "," << fmt17(r.sweep_value) << "," << r.seed << ","
       << fmt17(r.pe) << "," << fmt17(r.abs_bias) << "," << fmt17(r.rel_bias)
       << "\n";
  }
  return os.str();
}

// Plain-text table for the terminal.
inline std::string report_table(const BenchmarkReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %14s %16s %14s\n", "estimator",
                "abs_bias", "rel_bias(%)", "pe");
  os << line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof(line),
                  "%-10s %6.4f +-%6.4f %8.4f +-%7.4f %6.4f +-%6.4f\n",
                  r.estimator.c_str(), r.mean_abs, r.std_abs, r.mean_rel,
                  r.std_rel, r.mean_pe, r.std_pe);
    os << line;
  }
  return os.str();
}

}  // namespace peerfx
