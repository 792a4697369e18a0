#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peerfx/sem.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

// Output of one estimator run. pe_hat is always the mean of per_node_pe;
// bias metrics are present exactly when the dataset carried ground truth.
struct EstimationResult {
  std::string estimator;
  double pe_hat = 0.0;
  Vector per_node_pe;
  std::optional<double> abs_bias;
  std::optional<double> rel_bias;  // percent
  std::map<std::string, double> diagnostics;
  std::map<std::string, std::string> config_echo;
  std::vector<std::string> warnings;
};

// abs = |pe_hat - beta|, rel = |(pe_hat - beta) / beta| * 100.
inline void fill_bias(EstimationResult& res, const Dataset& ds) {
  if (!ds.truth) return;
  const double beta = ds.truth->beta;
  res.abs_bias = std::abs(res.pe_hat - beta);
  res.rel_bias = std::abs((res.pe_hat - beta) / beta) * 100.0;
}

inline EstimationResult make_constant_pe_result(std::string estimator,
                                                double pe, int n,
                                                const Dataset& ds) {
  EstimationResult res;
  res.estimator = std::move(estimator);
  res.pe_hat = pe;
  res.per_node_pe = Vector::Constant(n, pe);
  fill_bias(res, ds);
  return res;
}

}  // namespace peerfx
