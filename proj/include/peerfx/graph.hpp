#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peerfx/types.hpp"

namespace peerfx {

using EdgeList = std::vector<std::pair<int, int>>;

// Row-normalized adjacency of an undirected simple graph in CSR form.
// Each row with at least one neighbor sums to 1; isolated rows are empty,
// so multiplying by G takes neighbor means and leaves isolated nodes at 0.
// Column indices are sorted within each row, which makes iteration order
// (and therefore every downstream floating-point reduction) reproducible.
class SparseGraph {
 public:
  SparseGraph() : n_(0), row_ptr_(1, 0) {}

  // Build from an undirected edge list. Endpoints must lie in [0, n),
  // self-loops and duplicate edges (in either orientation) are rejected.
  static SparseGraph from_edge_list(const EdgeList& edges, int n) {
    if (n < 0) throw std::invalid_argument("node count must be nonnegative");
    std::vector<int> degree(static_cast<std::size_t>(n), 0);
    for (const auto& [a, b] : edges) {
      if (a < 0 || a >= n || b < 0 || b >= n) {
        throw std::invalid_argument("edge endpoint out of range: (" +
                                    std::to_string(a) + ", " +
                                    std::to_string(b) + ")");
      }
      if (a == b) {
        throw std::invalid_argument("self-loop rejected at node " +
                                    std::to_string(a));
      }
      ++degree[static_cast<std::size_t>(a)];
      ++degree[static_cast<std::size_t>(b)];
    }

    SparseGraph g;
    g.n_ = n;
    g.row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 0; i < n; ++i) {
      g.row_ptr_[static_cast<std::size_t>(i) + 1] =
          g.row_ptr_[static_cast<std::size_t>(i)] +
          degree[static_cast<std::size_t>(i)];
    }
    g.col_idx_.resize(static_cast<std::size_t>(g.row_ptr_.back()));
    std::vector<int> offset(g.row_ptr_.begin(), g.row_ptr_.end() - 1);
    for (const auto& [a, b] : edges) {
      g.col_idx_[static_cast<std::size_t>(offset[static_cast<std::size_t>(a)]++)] = b;
      g.col_idx_[static_cast<std::size_t>(offset[static_cast<std::size_t>(b)]++)] = a;
    }

    // Sort each row; adjacent equal columns expose duplicate input edges.
    for (int i = 0; i < n; ++i) {
      const auto lo = g.col_idx_.begin() + g.row_ptr_[static_cast<std::size_t>(i)];
      const auto hi = g.col_idx_.begin() + g.row_ptr_[static_cast<std::size_t>(i) + 1];
      std::sort(lo, hi);
      if (std::adjacent_find(lo, hi) != hi) {
        throw std::invalid_argument("duplicate edge incident to node " +
                                    std::to_string(i));
      }
    }

    g.weights_.resize(g.col_idx_.size());
    for (int i = 0; i < n; ++i) {
      const int deg = g.row_ptr_[static_cast<std::size_t>(i) + 1] -
                      g.row_ptr_[static_cast<std::size_t>(i)];
      const double w = deg > 0 ? 1.0 / static_cast<double>(deg) : 0.0;
      for (int k = g.row_ptr_[static_cast<std::size_t>(i)];
           k < g.row_ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        g.weights_[static_cast<std::size_t>(k)] = w;
      }
    }
    return g;
  }

  int num_nodes() const { return n_; }
  // Number of undirected edges (half the stored entries).
  int num_edges() const { return static_cast<int>(col_idx_.size() / 2); }

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_idx_; }
  const std::vector<double>& weights() const { return weights_; }

  int degree(int i) const {
    check_node(i);
    return row_ptr_[static_cast<std::size_t>(i) + 1] -
           row_ptr_[static_cast<std::size_t>(i)];
  }

  bool is_isolated(int i) const { return degree(i) == 0; }

  int num_isolated() const {
    int k = 0;
    for (int i = 0; i < n_; ++i) {
      if (degree(i) == 0) ++k;
    }
    return k;
  }

  // G * M: row i becomes the neighbor-weighted mean of M; isolated rows -> 0.
  Matrix aggregate(const Matrix& m) const {
    check_rows(m.rows());
    Matrix out = Matrix::Zero(m.rows(), m.cols());
    for (int i = 0; i < n_; ++i) {
      for (int k = row_ptr_[static_cast<std::size_t>(i)];
           k < row_ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        out.row(i) += weights_[static_cast<std::size_t>(k)] *
                      m.row(col_idx_[static_cast<std::size_t>(k)]);
      }
    }
    return out;
  }

  Vector aggregate(const Vector& v) const {
    check_rows(v.size());
    Vector out = Vector::Zero(v.size());
    for (int i = 0; i < n_; ++i) {
      double s = 0.0;
      for (int k = row_ptr_[static_cast<std::size_t>(i)];
           k < row_ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        s += weights_[static_cast<std::size_t>(k)] *
             v[col_idx_[static_cast<std::size_t>(k)]];
      }
      out[i] = s;
    }
    return out;
  }

  // G * (G * X) without materializing G^2.
  Matrix second_order(const Matrix& x) const { return aggregate(aggregate(x)); }

  // (I - G) * M = M - G*M. Isolated rows pass through unchanged.
  Matrix ig_transform(const Matrix& m) const { return m - aggregate(m); }

  Vector ig_transform(const Vector& v) const { return v - aggregate(v); }

  // Power-iteration estimate of the spectral radius. For a row-stochastic G
  // with at least one edge this is 1 up to iteration tolerance; an edgeless
  // graph returns 0.
  double spectral_radius_upper_bound() const {
    if (col_idx_.empty()) return 0.0;
    Vector v = Vector::Ones(n_);
    double est = 0.0;
    const int max_iter = 200;
    for (int it = 0; it < max_iter; ++it) {
      Vector w = aggregate(v);
      const double norm = w.norm();
      if (norm == 0.0) return 0.0;
      // Rayleigh-style estimate from consecutive iterates.
      const double next = std::abs(v.dot(w)) / v.squaredNorm();
      w /= norm;
      const double change = std::abs(next - est);
      est = next;
      v = std::move(w);
      if (it >= 1 && change < 1e-10 * std::max(1.0, std::abs(est))) break;
    }
    return est;
  }

  // Dense copy, for small-instance oracles.
  Matrix to_dense() const {
    Matrix d = Matrix::Zero(n_, n_);
    for (int i = 0; i < n_; ++i) {
      for (int k = row_ptr_[static_cast<std::size_t>(i)];
           k < row_ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        d(i, col_idx_[static_cast<std::size_t>(k)]) =
            weights_[static_cast<std::size_t>(k)];
      }
    }
    return d;
  }

  // Undirected edges, each listed once with i < j, in deterministic order.
  EdgeList edge_list() const {
    EdgeList edges;
    edges.reserve(col_idx_.size() / 2);
    for (int i = 0; i < n_; ++i) {
      for (int k = row_ptr_[static_cast<std::size_t>(i)];
           k < row_ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        const int j = col_idx_[static_cast<std::size_t>(k)];
        if (i < j) edges.emplace_back(i, j);
      }
    }
    return edges;
  }

 private:
  void check_node(int i) const {
    if (i < 0 || i >= n_) throw std::out_of_range("node index out of range");
  }

  void check_rows(Index rows) const {
    if (rows != n_) {
      throw std::invalid_argument("matrix rows (" + std::to_string(rows) +
                                  ") do not match node count (" +
                                  std::to_string(n_) + ")");
    }
  }

  int n_;
  std::vector<int> row_ptr_;
  std::vector<int> col_idx_;
  std::vector<double> weights_;
};

}  // namespace peerfx
