#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "peerfx/io_edge_list.hpp"
#include "peerfx/result.hpp"
#include "peerfx/sem.hpp"

namespace peerfx {

// 17 significant digits: doubles round-trip exactly through this text form.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Write-then-rename so interrupted runs never leave truncated files.
inline void atomic_write(const std::filesystem::path& path,
                         const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string());
    os << contents;
    if (!os) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Feature CSV: header row, first column the node id, then numeric columns.
inline std::string feature_csv(const Matrix& m,
                               const std::string& value_prefix) {
  std::ostringstream os;
  os << "node_id";
  for (Index j = 0; j < m.cols(); ++j) os << "," << value_prefix << j;
  os << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    os << i;
    for (Index j = 0; j < m.cols(); ++j) os << "," << fmt17(m(i, j));
    os << "\n";
  }
  return os.str();
}

inline Matrix parse_feature_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty feature csv");
  std::vector<std::vector<double>> rows;
  long expect_id = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) break;
    if (std::stol(cell) != expect_id) {
      throw std::runtime_error("feature csv rows must be ordered by node id");
    }
    ++expect_id;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && rows.back().size() != row.size()) {
      throw std::runtime_error("ragged feature csv");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("feature csv has no data rows");
  Matrix m(static_cast<Index>(rows.size()),
           static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return m;
}

inline nlohmann::json sem_params_json(const SemParams& p) {
  nlohmann::json j;
  j["beta"] = p.beta;
  j["gamma"] = std::vector<double>(p.gamma.begin(), p.gamma.end());
  j["delta"] = std::vector<double>(p.delta.begin(), p.delta.end());
  j["lambda"] = p.lambda_u;
  j["omega"] = p.omega;
  j["phi"] = p.phi;
  j["psi"] = p.psi;
  j["eps_scale"] = p.eps_scale;
  j["confounder_scale"] = p.confounder_scale;
  j["link"] = to_string(p.nonlinearity);
  return j;
}

inline SemParams sem_params_from_json(const nlohmann::json& j) {
  SemParams p;
  p.beta = j.at("beta").get<double>();
  const auto g = j.at("gamma").get<std::vector<double>>();
  const auto d = j.at("delta").get<std::vector<double>>();
  p.gamma = Eigen::Map<const Vector>(g.data(), static_cast<Index>(g.size()));
  p.delta = Eigen::Map<const Vector>(d.data(), static_cast<Index>(d.size()));
  p.lambda_u = j.at("lambda").get<double>();
  p.omega = j.at("omega").get<double>();
  p.phi = j.at("phi").get<double>();
  p.psi = j.at("psi").get<double>();
  p.eps_scale = j.at("eps_scale").get<double>();
  p.confounder_scale = j.at("confounder_scale").get<double>();
  p.nonlinearity = link_mode_from_string(j.at("link").get<std::string>());
  return p;
}

// Dataset directory layout: graph.txt (edge list), X.csv, Y.csv, and
// truth.json when the generating parameters are known.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream os;
    write_edge_list(os, ds.graph);
    atomic_write(dir / "graph.txt", os.str());
  }
  atomic_write(dir / "X.csv", feature_csv(ds.x, "x"));
  atomic_write(dir / "Y.csv", feature_csv(ds.y, "y"));
  if (ds.truth) {
    nlohmann::json j;
    j["params"] = sem_params_json(*ds.truth);
    j["seed"] = ds.seed;
    j["n"] = ds.n();
    j["d"] = ds.d();
    atomic_write(dir / "truth.json", j.dump(2) + "\n");
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream is(dir / "X.csv");
    if (!is) throw std::runtime_error("missing X.csv in " + dir.string());
    ds.x = parse_feature_csv(is);
  }
  {
    std::ifstream is(dir / "Y.csv");
    if (!is) throw std::runtime_error("missing Y.csv in " + dir.string());
    const Matrix y = parse_feature_csv(is);
    if (y.cols() != 1) throw std::runtime_error("Y.csv must have one column");
    if (y.rows() != ds.x.rows()) {
      throw std::runtime_error("X.csv and Y.csv row counts differ");
    }
    ds.y = y.col(0);
  }
  ds.graph = load_edge_list_file((dir / "graph.txt").string(),
                                 static_cast<int>(ds.x.rows()));
  ds.x_g = ds.graph.aggregate(ds.x);
  ds.x_g2 = ds.graph.aggregate(ds.x_g);
  ds.y_g = ds.graph.aggregate(ds.y);
  const auto truth_path = dir / "truth.json";
  if (std::filesystem::exists(truth_path)) {
    std::ifstream is(truth_path);
    nlohmann::json j;
    is >> j;
    ds.truth = sem_params_from_json(j.at("params"));
    ds.seed = j.at("seed").get<std::uint64_t>();
  }
  ds.validate();
  return ds;
}

// Flat key-value result file, plus an optional per-node PE csv next to it.
inline std::string result_text(const EstimationResult& res) {
  std::ostringstream os;
  os << "estimator = " << res.estimator << "\n";
  os << "pe_hat = " << fmt17(res.pe_hat) << "\n";
  os << "n = " << res.per_node_pe.size() << "\n";
  if (res.abs_bias) os << "abs_bias = " << fmt17(*res.abs_bias) << "\n";
  if (res.rel_bias) os << "rel_bias = " << fmt17(*res.rel_bias) << "\n";
  for (const auto& [k, v] : res.diagnostics) {
    os << "diag." << k << " = " << fmt17(v) << "\n";
  }
  for (const auto& [k, v] : res.config_echo) {
    os << "config." << k << " = " << v << "\n";
  }
  for (std::size_t i = 0; i < res.warnings.size(); ++i) {
    os << "warning." << i << " = " << res.warnings[i] << "\n";
  }
  return os.str();
}

inline void save_result(const EstimationResult& res,
                        const std::filesystem::path& path,
                        bool with_per_node_csv = false) {
  atomic_write(path, result_text(res));
  if (with_per_node_csv) {
    std::ostringstream os;
    os << "node_id,pe\n";
    for (Index i = 0; i < res.per_node_pe.size(); ++i) {
      os << i << "," << fmt17(res.per_node_pe[i]) << "\n";
    }
    atomic_write(path.string() + ".per_node.csv", os.str());
  }
}

// FNV-1a over the defining arrays; used to assert dataset pairing in sweeps.
inline std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* p, std::size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  const auto& rp = ds.graph.row_ptr();
  const auto& ci = ds.graph.col_idx();
  mix_bytes(rp.data(), rp.size() * sizeof(int));
  mix_bytes(ci.data(), ci.size() * sizeof(int));
  mix_bytes(ds.x.data(), static_cast<std::size_t>(ds.x.size()) * sizeof(double));
  mix_bytes(ds.y.data(), static_cast<std::size_t>(ds.y.size()) * sizeof(double));
  return h;
}

}  // namespace peerfx
