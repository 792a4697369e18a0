#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peerfx/graph.hpp"
#include "peerfx/io_edge_list.hpp"
#include "peerfx/rng.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

enum class LinkMode { linear, nonlinear };

inline std::string to_string(LinkMode m) {
  return m == LinkMode::linear ? "linear" : "nonlinear";
}

inline LinkMode link_mode_from_string(const std::string& s) {
  if (s == "linear") return LinkMode::linear;
  if (s == "nonlinear") return LinkMode::nonlinear;
  throw std::invalid_argument("unknown link mode: " + s);
}

// Structural coefficients of the data-generating process. The outcome of
// node i solves, at equilibrium,
//   Y_i = beta*(GY)_i + (GX)_i'gamma + g(X_i)'delta
//         + lambda_u*U_i + omega*(GU)_i + eps_i.
// omega is the confounder's neighbor channel: U_i sits in each neighbor's
// outcome equation, so it loads the peer exposure Y_Gi at first order.
// `phi`, `psi` are the coefficients of the peer-exposure working model
// (exposure regressed on instruments); the simulator does not draw a
// separate exposure equation -- that relation arises mechanically from the
// equilibrium -- so they are carried for planted-exposure experiments.
struct SemParams {
  double beta = 0.5;
  Vector gamma = Vector::Constant(1, 1.5);  // size 1 broadcasts over features
  Vector delta = Vector::Constant(1, 1.0);
  double lambda_u = 1.0;
  double omega = 1.0;
  double phi = 0.0;
  double psi = 0.0;
  double eps_scale = 0.1;
  double confounder_scale = 1.0;
  LinkMode nonlinearity = LinkMode::linear;

  void validate() const {
    if (!(std::abs(beta) < 1.0)) {
      throw std::invalid_argument("|beta| must be < 1 for a stable equilibrium");
    }
    if (!(eps_scale > 0.0)) throw std::invalid_argument("eps_scale must be > 0");
    if (!(confounder_scale > 0.0)) {
      throw std::invalid_argument("confounder_scale must be > 0");
    }
  }

  // Expand size-1 gamma/delta to the feature dimension.
  SemParams broadcast(int d) const {
    SemParams p = *this;
    if (p.gamma.size() == 1 && d > 1) p.gamma = Vector::Constant(d, p.gamma[0]);
    if (p.delta.size() == 1 && d > 1) p.delta = Vector::Constant(d, p.delta[0]);
    if (p.gamma.size() != d || p.delta.size() != d) {
      throw std::invalid_argument("gamma/delta length does not match d");
    }
    return p;
  }
};

// The covariate link of the delta channel. The peer term stays linear in
// both modes, so the ground-truth peer effect is the constant beta.
inline double covariate_link(double x, LinkMode mode) {
  return mode == LinkMode::linear ? x : std::tanh(x) + 0.25 * x * x;
}

struct GraphSpec {
  enum class Model { erdos_renyi, barabasi_albert, from_file };
  Model model = Model::erdos_renyi;
  double param = 0.01;  // ER edge probability or BA attachment count
  std::string path;     // from_file edge list
};

// A network dataset: features, outcomes, and the derived neighbor
// aggregates. `u`/`eps` are populated by the simulator only; `truth`
// carries the generating parameters when known.
struct Dataset {
  SparseGraph graph;
  Matrix x;    // n x d
  Vector y;    // n
  Vector y_g;  // G*y
  Matrix x_g;  // G*x
  Matrix x_g2; // G*(G*x)
  std::optional<Vector> u;
  std::optional<Vector> eps;
  std::optional<SemParams> truth;
  std::uint64_t seed = 0;
  bool ig_transformed = false;

  int n() const { return graph.num_nodes(); }
  int d() const { return static_cast<int>(x.cols()); }

  void validate() const {
    const int nn = graph.num_nodes();
    if (x.rows() != nn || y.size() != nn || y_g.size() != nn ||
        x_g.rows() != nn || x_g2.rows() != nn) {
      throw std::invalid_argument("dataset arrays do not match node count");
    }
    if (!x.allFinite() || !y.allFinite()) {
      throw std::invalid_argument("dataset contains non-finite entries");
    }
    if ((y_g - graph.aggregate(y)).cwiseAbs().maxCoeff() > 1e-10) {
      throw std::invalid_argument("y_g is not the neighbor aggregate of y");
    }
  }
};

namespace rng_tag {
inline constexpr std::uint64_t graph = 0x6772617068ULL;
inline constexpr std::uint64_t features = 0x66656174ULL;
inline constexpr std::uint64_t confounder = 0x636f6e66ULL;
inline constexpr std::uint64_t noise = 0x6e6f6973ULL;
inline constexpr std::uint64_t stage1 = 0x73746731ULL;
inline constexpr std::uint64_t stage2 = 0x73746732ULL;
}  // namespace rng_tag

// Seeded Erdos-Renyi draw: each unordered pair is an edge with prob p.
inline SparseGraph gen_erdos_renyi(int n, double p, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("erdos_renyi needs n >= 2");
  if (!(p > 0.0 && p <= 1.0)) {
    throw std::invalid_argument("erdos_renyi edge probability must be in (0, 1]");
  }
  Rng rng = Rng::stream(seed, rng_tag::graph);
  EdgeList edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p)) edges.emplace_back(i, j);
    }
  }
  return SparseGraph::from_edge_list(edges, n);
}

// Seeded Barabasi-Albert preferential attachment: node k >= 1 links to
// min(m, k) distinct earlier nodes, chosen proportionally to degree.
inline SparseGraph gen_barabasi_albert(int n, int m, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("barabasi_albert needs n >= 2");
  if (m < 1) throw std::invalid_argument("attachment count must be >= 1");
  Rng rng = Rng::stream(seed, rng_tag::graph);
  EdgeList edges;
  std::vector<int> urn;  // endpoint multiset; sampling it is degree-proportional
  for (int k = 1; k < n; ++k) {
    const int want = std::min(m, k);
    std::vector<int> targets;
    while (static_cast<int>(targets.size()) < want) {
      int cand;
      if (urn.empty()) {
        cand = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
      } else {
        cand = urn[rng.uniform_int(urn.size())];
      }
      if (std::find(targets.begin(), targets.end(), cand) == targets.end()) {
        targets.push_back(cand);
      }
    }
    for (int t : targets) {
      edges.emplace_back(t, k);
      urn.push_back(t);
      urn.push_back(k);
    }
  }
  return SparseGraph::from_edge_list(edges, n);
}

inline SparseGraph gen_graph(int n, const GraphSpec& spec, std::uint64_t seed);

// Neighbor-mixed Gaussian confounder: U = (1-mixing)*Z + mixing*G*Z with
// Z iid N(0, scale^2). Positive mixing makes neighbors share confounding.
inline Vector gen_confounders(const SparseGraph& g, double scale, double mixing,
                              std::uint64_t seed) {
  if (mixing < 0.0 || mixing > 1.0) {
    throw std::invalid_argument("confounder mixing must lie in [0, 1]");
  }
  Rng rng = Rng::stream(seed, rng_tag::confounder);
  Vector z = Vector::NullaryExpr(g.num_nodes(),
                                 [&]() { return scale * rng.normal(); });
  if (mixing == 0.0) return z;
  return (1.0 - mixing) * z + mixing * g.aggregate(z);
}

// Solve (I - beta*G) y = c by Jacobi iteration y <- c + beta*G*y.
// Requires |beta| * rho(G) < 1; the iteration is then a contraction.
inline Vector solve_equilibrium(const SparseGraph& g, double beta,
                                const Vector& c) {
  if (c.size() != g.num_nodes()) {
    throw std::invalid_argument("equilibrium rhs does not match node count");
  }
  const double rho = g.spectral_radius_upper_bound();
  if (std::abs(beta) * rho >= 1.0) {
    throw std::invalid_argument(
        "|beta| * rho(G) must be < 1 for an equilibrium to exist");
  }
  Vector y = c;
  const int max_iter = 10000;
  for (int it = 0; it < max_iter; ++it) {
    Vector next = c + beta * g.aggregate(y);
    const double change = (next - y).lpNorm<Eigen::Infinity>();
    y = std::move(next);
    if (change < 1e-12) break;
  }
  const double residual =
      (y - c - beta * g.aggregate(y)).lpNorm<Eigen::Infinity>();
  if (!(residual < 1e-10)) {
    throw std::runtime_error(
        "equilibrium iteration did not converge; |beta|*rho(G) too close to 1");
  }
  return y;
}

inline constexpr double kDefaultConfounderMixing = 0.7;

// Everything needed to regenerate a dataset from one seed.
struct DatasetSpec {
  int n = 3000;
  int d = 3;
  GraphSpec graph;
  SemParams params;
  double confounder_mixing = kDefaultConfounderMixing;
};

// Draw one semi-synthetic dataset. Deterministic in (spec, seed): the graph,
// features, confounder, and noise each use an independent derived stream.
inline Dataset gen_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n < 2) throw std::invalid_argument("dataset needs n >= 2");
  if (spec.d < 1) throw std::invalid_argument("dataset needs d >= 1");
  const SemParams params = spec.params.broadcast(spec.d);
  params.validate();

  Dataset ds;
  ds.graph = gen_graph(spec.n, spec.graph, seed);
  ds.seed = seed;

  Rng xrng = Rng::stream(seed, rng_tag::features);
  ds.x = Matrix::NullaryExpr(spec.n, spec.d, [&]() { return xrng.normal(); });
  ds.x_g = ds.graph.aggregate(ds.x);
  ds.x_g2 = ds.graph.aggregate(ds.x_g);

  Vector u = gen_confounders(ds.graph, params.confounder_scale,
                             spec.confounder_mixing, seed);
  Rng erng = Rng::stream(seed, rng_tag::noise);
  Vector eps = Vector::NullaryExpr(
      spec.n, [&]() { return params.eps_scale * erng.normal(); });

  Matrix gx = ds.x;
  if (params.nonlinearity == LinkMode::nonlinear) {
    gx = ds.x.unaryExpr(
        [](double v) { return covariate_link(v, LinkMode::nonlinear); });
  }
  Vector c = ds.x_g * params.gamma + gx * params.delta +
             params.lambda_u * u + params.omega * ds.graph.aggregate(u) + eps;

  ds.y = solve_equilibrium(ds.graph, params.beta, c);
  ds.y_g = ds.graph.aggregate(ds.y);
  ds.u = std::move(u);
  ds.eps = std::move(eps);
  ds.truth = params;
  return ds;
}

// Signature mirroring the generation interface piecewise.
inline Dataset gen_dataset(int n, int d, const GraphSpec& graph,
                           const SemParams& params, std::uint64_t seed,
                           double confounder_mixing = kDefaultConfounderMixing) {
  DatasetSpec spec;
  spec.n = n;
  spec.d = d;
  spec.graph = graph;
  spec.params = params;
  spec.confounder_mixing = confounder_mixing;
  return gen_dataset(spec, seed);
}

// Replace every variable by its (I - G)-transformed version. The original
// dataset is untouched. y_g remains the aggregate of y because (I - G)
// commutes with G. Applying twice composes to (I - G)^2.
inline Dataset preprocess_ig(const Dataset& ds) {
  Dataset out = ds;
  out.y = ds.graph.ig_transform(ds.y);
  out.y_g = ds.graph.ig_transform(ds.y_g);
  out.x = ds.graph.ig_transform(ds.x);
  out.x_g = ds.graph.ig_transform(ds.x_g);
  out.x_g2 = ds.graph.ig_transform(ds.x_g2);
  if (ds.u) out.u = ds.graph.ig_transform(*ds.u);
  if (ds.eps) out.eps = ds.graph.ig_transform(*ds.eps);
  out.ig_transformed = true;
  return out;
}

inline SparseGraph gen_graph(int n, const GraphSpec& spec, std::uint64_t seed) {
  switch (spec.model) {
    case GraphSpec::Model::erdos_renyi:
      return gen_erdos_renyi(n, spec.param, seed);
    case GraphSpec::Model::barabasi_albert:
      return gen_barabasi_albert(n, static_cast<int>(spec.param), seed);
    case GraphSpec::Model::from_file:
      return load_edge_list_file(spec.path);
  }
  throw std::logic_error("unreachable graph model");
}

}  // namespace peerfx
