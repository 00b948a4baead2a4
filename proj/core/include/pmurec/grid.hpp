// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pmurec/types.hpp"

namespace pmurec::grid {

struct Edge {
  int i = 0;
  int j = 0;
  double g = 0.0;  // conductance, p.u.
  double b = 0.0;  // susceptance, p.u.
};

/// Bus/branch topology with the PMU-equipped node set. Immutable after
/// load; safe to share across threads.
struct GridGraph {
  int n_bus = 0;
  std::vector<Edge> edges;     // i < j, unique, no self-edges
  std::vector<int> pmu_nodes;  // strictly increasing bus ids

  int pmu_count() const { return static_cast<int>(pmu_nodes.size()); }
  std::vector<std::vector<int>> adjacency() const;
};

/// Loads a grid JSON file: {n_bus, edges [[i,j,g,b],...], pmu_nodes [...]}.
/// Distinct diagnostics for parse failures, duplicate edges, PMU indices
/// out of range, and disconnected graphs.
GridGraph load_grid(const std::filesystem::path& path);

/// Same validation on an in-memory JSON string (used by tests).
GridGraph parse_grid(const std::string& text);

/// Full-graph BFS shortest-path distances from `src` (-1 = unreachable).
std::vector<int> bfs_distances(const GridGraph& g, int src);

/// Per-hop adjacency/diffusion operators over the PMU nodes. Hop k links
/// PMU pairs whose shortest-path distance in the full bus graph is
/// exactly k; non-PMU buses may lie on the path.
struct KHopOperatorSet {
  int max_hops = 0;
  std::vector<int> order;  // pmu bus ids defining row/column order
  std::vector<Matrix> adjacency;  // A_k with unit diagonal, index k-1
  std::vector<Vector> degree;     // diagonal of D_k
  std::vector<Matrix> diffusion;  // S_k = D_k^-1/2 A_k D_k^-1/2
  // neighbors[k-1][i]: PMU positions at distance exactly k from position i
  std::vector<std::vector<std::vector<int>>> neighbors;
  // Union over 1..K of neighbors, per position (sorted).
  std::vector<std::vector<int>> hop_union;
  // Positions with no PMU neighbor within max_hops.
  std::vector<int> isolated;

  int pmu_count() const { return static_cast<int>(order.size()); }
  const std::vector<int>& neighbors_at(int hop, int pos) const {
    return neighbors[static_cast<size_t>(hop - 1)][static_cast<size_t>(pos)];
  }
};

KHopOperatorSet build_khop_operators(const GridGraph& g, int max_hops);

/// |Zbus| restricted to PMU rows/columns: invert the complex bus
/// admittance matrix (regularized by shunt_eps on the diagonal) and take
/// the entrywise modulus.
struct EdgeFeatureMatrix {
  Matrix values;  // N_p x N_p, symmetric, nonnegative
};

EdgeFeatureMatrix impedance_edge_features(const GridGraph& g,
                                          double shunt_eps = 1e-2);

}  // namespace pmurec::grid
