#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "peerfx/dig2rsi.hpp"
#include "peerfx/eval.hpp"
#include "peerfx/sem.hpp"

namespace peerfx {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Parsed run configuration. The file format is sectioned key = value text:
//
//   [graph]
//   model = erdos_renyi
//   n = 3000
//   p = 0.0033333333333333335
//   [sem]
//   beta = 0.5
//   [run]
//   estimators = naive,2sls,dig2rsi
//   seeds = 1,2,3,4,5
//
// '#' starts a comment. Unknown sections or keys are errors; every numeric
// field is validated at parse time so bad configs fail before any work.
struct RunConfig {
  DatasetSpec dataset;
  TrainConfig stage1;
  Stage2Config stage2;
  std::vector<std::string> estimators;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> lambda_grid{0.0, 0.01, 0.02, 0.03, 0.05, 0.08, 0.1};
  std::vector<double> strengths{0.0, 0.5, 1.0, 2.0};
  std::string out_dir = "out";
  int threads = 1;

  EstimatorSpec estimator_spec(const std::string& name) const {
    EstimatorSpec spec = EstimatorSpec::from_name(name);
    spec.stage1 = stage1;
    spec.dl_stage2 = stage2.train;
    spec.stage2 = stage2;
    return spec;
  }

  std::vector<EstimatorSpec> estimator_specs() const {
    std::vector<EstimatorSpec> specs;
    specs.reserve(estimators.size());
    for (const auto& name : estimators) specs.push_back(estimator_spec(name));
    return specs;
  }
};

namespace detail {

struct KeyValue {
  std::string section, key, value;
  int line = 0;
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<KeyValue> parse_key_values(std::istream& is) {
  std::vector<KeyValue> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("malformed section header at line " +
                          std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value at line " +
                        std::to_string(lineno));
    }
    KeyValue kv;
    kv.section = section;
    kv.key = trim(line.substr(0, eq));
    kv.value = trim(line.substr(eq + 1));
    kv.line = lineno;
    if (kv.key.empty() || kv.value.empty()) {
      throw ConfigError("empty key or value at line " + std::to_string(lineno));
    }
    out.push_back(std::move(kv));
  }
  return out;
}

inline double to_double(const KeyValue& kv) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + kv.section + "." + kv.key +
                      " at line " + std::to_string(kv.line));
  }
}

inline long to_long(const KeyValue& kv) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + kv.section + "." + kv.key +
                      " at line " + std::to_string(kv.line));
  }
}

inline bool to_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw ConfigError("bad boolean for " + kv.section + "." + kv.key);
}

template <typename T, typename F>
std::vector<T> parse_list(const KeyValue& kv, F&& convert) {
  std::vector<T> out;
  std::istringstream ls(kv.value);
  std::string cell;
  while (std::getline(ls, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) {
      throw ConfigError("empty list element in " + kv.section + "." + kv.key);
    }
    out.push_back(convert(cell));
  }
  if (out.empty()) {
    throw ConfigError("empty list for " + kv.section + "." + kv.key);
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& is) {
  RunConfig cfg;
  bool graph_param_set = false;
  for (const auto& kv : detail::parse_key_values(is)) {
    const std::string where = kv.section + "." + kv.key;
    if (kv.section == "graph") {
      if (kv.key == "model") {
        if (kv.value == "erdos_renyi") {
          cfg.dataset.graph.model = GraphSpec::Model::erdos_renyi;
        } else if (kv.value == "barabasi_albert") {
          cfg.dataset.graph.model = GraphSpec::Model::barabasi_albert;
        } else if (kv.value == "from_file") {
          cfg.dataset.graph.model = GraphSpec::Model::from_file;
        } else {
          throw ConfigError("unknown graph model '" + kv.value + "'");
        }
      } else if (kv.key == "n") {
        cfg.dataset.n = static_cast<int>(detail::to_long(kv));
      } else if (kv.key == "p" || kv.key == "m") {
        cfg.dataset.graph.param = detail::to_double(kv);
        graph_param_set = true;
      } else if (kv.key == "path") {
        cfg.dataset.graph.path = kv.value;
      } else {
        throw ConfigError("unknown key " + where);
      }
    } else if (kv.section == "sem") {
      if (kv.key == "beta") {
        cfg.dataset.params.beta = detail::to_double(kv);
      } else if (kv.key == "gamma") {
        const auto xs = detail::parse_list<double>(
            kv, [&](const std::string& c) { return std::stod(c); });
        cfg.dataset.params.gamma =
            Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
      } else if (kv.key == "delta") {
        const auto xs = detail::parse_list<double>(
            kv, [&](const std::string& c) { return std::stod(c); });
        cfg.dataset.params.delta =
            Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
      } else if (kv.key == "lambda") {
        cfg.dataset.params.lambda_u = detail::to_double(kv);
      } else if (kv.key == "omega") {
        cfg.dataset.params.omega = detail::to_double(kv);
      } else if (kv.key == "phi") {
        cfg.dataset.params.phi = detail::to_double(kv);
      } else if (kv.key == "psi") {
        cfg.dataset.params.psi = detail::to_double(kv);
      } else if (kv.key == "eps_scale") {
        cfg.dataset.params.eps_scale = detail::to_double(kv);
      } else if (kv.key == "confounder_scale") {
        cfg.dataset.params.confounder_scale = detail::to_double(kv);
      } else if (kv.key == "mixing") {
        cfg.dataset.confounder_mixing = detail::to_double(kv);
      } else if (kv.key == "link") {
        cfg.dataset.params.nonlinearity = link_mode_from_string(kv.value);
      } else if (kv.key == "d") {
        cfg.dataset.d = static_cast<int>(detail::to_long(kv));
      } else {
        throw ConfigError("unknown key " + where);
      }
    } else if (kv.section == "stage1" || kv.section == "stage2") {
      TrainConfig& tc =
          kv.section == "stage1" ? cfg.stage1 : cfg.stage2.train;
      if (kv.key == "lr") {
        tc.lr = detail::to_double(kv);
      } else if (kv.key == "epochs") {
        tc.epochs = static_cast<int>(detail::to_long(kv));
      } else if (kv.key == "batch") {
        tc.batch_size = static_cast<int>(detail::to_long(kv));
      } else if (kv.key == "weight_decay") {
        tc.weight_decay = detail::to_double(kv);
      } else if (kv.section == "stage2" && kv.key == "lambda_a") {
        cfg.stage2.lambda_a = detail::to_double(kv);
      } else if (kv.section == "stage2" && kv.key == "disc_lr") {
        cfg.stage2.disc_lr = detail::to_double(kv);
      } else if (kv.section == "stage2" && kv.key == "per_epoch_alternation") {
        cfg.stage2.per_epoch_alternation = detail::to_bool(kv);
      } else if (kv.section == "stage2" && kv.key == "holdout_frac") {
        cfg.stage2.holdout_frac = detail::to_double(kv);
      } else if (kv.section == "stage2" && kv.key == "hidden_width") {
        cfg.stage2.hidden_width = static_cast<int>(detail::to_long(kv));
      } else if (kv.section == "stage2" && kv.key == "hidden_layers") {
        cfg.stage2.hidden_layers = static_cast<int>(detail::to_long(kv));
      } else {
        throw ConfigError("unknown key " + where);
      }
    } else if (kv.section == "run") {
      if (kv.key == "estimators") {
        cfg.estimators = detail::parse_list<std::string>(
            kv, [](const std::string& c) { return c; });
      } else if (kv.key == "seeds") {
        cfg.seeds = detail::parse_list<std::uint64_t>(
            kv, [](const std::string& c) { return std::stoull(c); });
      } else if (kv.key == "out") {
        cfg.out_dir = kv.value;
      } else if (kv.key == "threads") {
        cfg.threads = static_cast<int>(detail::to_long(kv));
      } else {
        throw ConfigError("unknown key " + where);
      }
    } else if (kv.section == "sweep") {
      if (kv.key == "lambda_grid") {
        cfg.lambda_grid = detail::parse_list<double>(
            kv, [](const std::string& c) { return std::stod(c); });
      } else if (kv.key == "strengths") {
        cfg.strengths = detail::parse_list<double>(
            kv, [](const std::string& c) { return std::stod(c); });
      } else {
        throw ConfigError("unknown key " + where);
      }
    } else {
      throw ConfigError("unknown section [" + kv.section + "]");
    }
  }

  // Fail fast: every downstream invariant that is checkable without data.
  try {
    cfg.dataset.params.validate();
    cfg.dataset.params.broadcast(cfg.dataset.d);
    cfg.stage1.validate();
    cfg.stage2.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (cfg.dataset.n < 2) throw ConfigError("graph.n must be >= 2");
  if (cfg.dataset.d < 1) throw ConfigError("sem.d must be >= 1");
  if (cfg.dataset.graph.model == GraphSpec::Model::erdos_renyi &&
      graph_param_set &&
      !(cfg.dataset.graph.param > 0.0 && cfg.dataset.graph.param <= 1.0)) {
    throw ConfigError("graph.p must lie in (0, 1]");
  }
  if (cfg.dataset.graph.model == GraphSpec::Model::from_file) {
    if (cfg.dataset.graph.path.empty()) {
      throw ConfigError("graph.path required for model = from_file");
    }
    if (!std::filesystem::exists(cfg.dataset.graph.path)) {
      throw ConfigError("graph.path does not exist: " +
                        cfg.dataset.graph.path);
    }
  }
  if (cfg.dataset.confounder_mixing < 0.0 ||
      cfg.dataset.confounder_mixing > 1.0) {
    throw ConfigError("sem.mixing must lie in [0, 1]");
  }
  if (cfg.threads < 1) throw ConfigError("run.threads must be >= 1");
  if (cfg.seeds.empty()) throw ConfigError("run.seeds must be non-empty");
  for (double la : cfg.lambda_grid) {
    if (la < 0.0) throw ConfigError("sweep.lambda_grid values must be >= 0");
  }
  for (double s : cfg.strengths) {
    if (s < 0.0) throw ConfigError("sweep.strengths values must be >= 0");
  }
  for (const auto& name : cfg.estimators) {
    try {
      EstimatorSpec::from_name(name);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  return parse_config(is);
}

}  // namespace peerfx
