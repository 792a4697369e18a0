#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "peerfx/graph.hpp"

namespace peerfx {

// Edge-list text format: one edge per line as two whitespace-separated
// zero-based node ids; lines starting with '#' are comments. The node count
// is one past the largest id seen unless a larger count is forced.
inline SparseGraph parse_edge_list(std::istream& is, int n_override = -1) {
  EdgeList edges;
  int max_node = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long a = 0, b = 0;
    if (!(ls >> a >> b)) {
      throw std::runtime_error("edge list parse error at line " +
                               std::to_string(lineno));
    }
    std::string extra;
    if (ls >> extra) {
      throw std::runtime_error("unexpected trailing tokens at line " +
                               std::to_string(lineno));
    }
    edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
    max_node = std::max({max_node, static_cast<int>(a), static_cast<int>(b)});
  }
  const int n = n_override >= 0 ? n_override : max_node + 1;
  return SparseGraph::from_edge_list(edges, n);
}

inline SparseGraph load_edge_list_file(const std::string& path,
                                       int n_override = -1) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open edge list: " + path);
  return parse_edge_list(is, n_override);
}

inline void write_edge_list(std::ostream& os, const SparseGraph& g) {
  os << "# " << g.num_nodes() << " nodes, " << g.num_edges() << " edges\n";
  for (const auto& [a, b] : g.edge_list()) os << a << " " << b << "\n";
}

}  // namespace peerfx
