// SPDX-License-Identifier: Apache-2.0
#include "pmurec/grid.hpp"

#include <algorithm>
#include <complex>
#include <deque>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

namespace pmurec::grid {

using nlohmann::json;

std::vector<std::vector<int>> GridGraph::adjacency() const {
  std::vector<std::vector<int>> adj(static_cast<size_t>(n_bus));
  for (const auto& e : edges) {
    adj[static_cast<size_t>(e.i)].push_back(e.j);
    adj[static_cast<size_t>(e.j)].push_back(e.i);
  }
  return adj;
}

std::vector<int> bfs_distances(const GridGraph& g, int src) {
  const auto adj = g.adjacency();
  std::vector<int> dist(static_cast<size_t>(g.n_bus), -1);
  dist[static_cast<size_t>(src)] = 0;
  std::deque<int> queue{src};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[static_cast<size_t>(u)]) {
      if (dist[static_cast<size_t>(v)] < 0) {
        dist[static_cast<size_t>(v)] = dist[static_cast<size_t>(u)] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

namespace {

GridGraph validate(GridGraph g) {
  if (g.n_bus < 1) throw ValidationError("grid: n_bus must be >= 1");
  std::set<std::pair<int, int>> seen;
  for (auto& e : g.edges) {
    if (e.i == e.j)
      throw ValidationError("grid: self-edge at bus " + std::to_string(e.i));
    if (e.i > e.j) std::swap(e.i, e.j);
    if (e.i < 0 || e.j >= g.n_bus)
      throw ValidationError("grid: edge endpoint out of range: (" +
                            std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
    if (!seen.insert({e.i, e.j}).second)
      throw ValidationError("grid: duplicate edge (" + std::to_string(e.i) +
                            ", " + std::to_string(e.j) + ")");
  }
  if (g.pmu_nodes.empty()) throw ValidationError("grid: pmu_nodes is empty");
  for (int p : g.pmu_nodes)
    if (p < 0 || p >= g.n_bus)
      throw ValidationError("grid: pmu index out of range: " + std::to_string(p));
  std::sort(g.pmu_nodes.begin(), g.pmu_nodes.end());
  if (std::adjacent_find(g.pmu_nodes.begin(), g.pmu_nodes.end()) !=
      g.pmu_nodes.end())
    throw ValidationError("grid: duplicate pmu index");
  const auto dist = bfs_distances(g, 0);
  if (std::any_of(dist.begin(), dist.end(), [](int d) { return d < 0; }))
    throw ValidationError("grid: graph is disconnected");
  return g;
}

GridGraph from_json(const json& root) {
  GridGraph g;
  try {
    g.n_bus = root.at("n_bus").get<int>();
    for (const auto& row : root.at("edges")) {
      Edge e;
      e.i = row.at(0).get<int>();
      e.j = row.at(1).get<int>();
      e.g = row.at(2).get<double>();
      e.b = row.at(3).get<double>();
      g.edges.push_back(e);
    }
    g.pmu_nodes = root.at("pmu_nodes").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid: malformed file: ") + e.what());
  }
  return validate(std::move(g));
}

}  // namespace

GridGraph load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("grid: cannot open " + path.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ValidationError("grid: parse failure in " + path.string() + ": " +
                          e.what());
  }
  return from_json(root);
}

GridGraph parse_grid(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid: parse failure: ") + e.what());
  }
  return from_json(root);
}

KHopOperatorSet build_khop_operators(const GridGraph& g, int max_hops) {
  if (max_hops < 1) throw ValidationError("khop: max_hops must be >= 1");
  KHopOperatorSet ops;
  ops.max_hops = max_hops;
  ops.order = g.pmu_nodes;
  const int np = ops.pmu_count();
  const size_t kh = static_cast<size_t>(max_hops);

  ops.adjacency.assign(kh, Matrix::Identity(np, np));
  ops.neighbors.assign(kh, std::vector<std::vector<int>>(static_cast<size_t>(np)));
  ops.hop_union.assign(static_cast<size_t>(np), {});

  for (int a = 0; a < np; ++a) {
    const auto dist = bfs_distances(g, ops.order[static_cast<size_t>(a)]);
    for (int b = 0; b < np; ++b) {
      if (a == b) continue;
      const int d = dist[static_cast<size_t>(ops.order[static_cast<size_t>(b)])];
      if (d >= 1 && d <= max_hops) {
        ops.adjacency[static_cast<size_t>(d - 1)](a, b) = 1.0;
        ops.neighbors[static_cast<size_t>(d - 1)][static_cast<size_t>(a)]
            .push_back(b);
        ops.hop_union[static_cast<size_t>(a)].push_back(b);
      }
    }
    std::sort(ops.hop_union[static_cast<size_t>(a)].begin(),
              ops.hop_union[static_cast<size_t>(a)].end());
    if (ops.hop_union[static_cast<size_t>(a)].empty()) ops.isolated.push_back(a);
  }

  for (size_t k = 0; k < kh; ++k) {
    const Matrix& a_k = ops.adjacency[k];
    Vector deg = a_k.rowwise().sum();
    ops.degree.push_back(deg);
    const Vector inv_sqrt = deg.array().rsqrt();
    ops.diffusion.push_back(inv_sqrt.asDiagonal() * a_k * inv_sqrt.asDiagonal());
  }

  if (!ops.isolated.empty()) {
    std::cerr << "khop: warning: " << ops.isolated.size()
              << " PMU node(s) have no PMU neighbor within " << max_hops
              << " hops; self-only attention applies\n";
  }
  return ops;
}

EdgeFeatureMatrix impedance_edge_features(const GridGraph& g, double shunt_eps) {
  if (shunt_eps <= 0.0) throw ValidationError("edge features: shunt_eps must be > 0");
  using Complex = std::complex<double>;
  using CMatrix = Eigen::MatrixXcd;

  const int n = g.n_bus;
  CMatrix ybus = CMatrix::Zero(n, n);
  for (const auto& e : g.edges) {
    const Complex y(e.g, e.b);
    ybus(e.i, e.j) -= y;
    ybus(e.j, e.i) -= y;
    ybus(e.i, e.i) += y;
    ybus(e.j, e.j) += y;
  }
  ybus.diagonal().array() += Complex(shunt_eps, 0.0);

  Eigen::JacobiSVD<CMatrix> dec(ybus);
  const double smin = dec.singularValues()(n - 1);
  const double smax = dec.singularValues()(0);
  if (smin <= 0.0 || smax / smin > 1e12) {
    std::ostringstream msg;
    msg << "edge features: admittance matrix numerically singular after "
        << "regularization (condition estimate "
        << (smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity())
        << ")";
    throw ComputeError(msg.str());
  }

  const CMatrix zbus = ybus.partialPivLu().inverse();
  const int np = g.pmu_count();
  EdgeFeatureMatrix out;
  out.values.resize(np, np);
  for (int a = 0; a < np; ++a)
    for (int b = 0; b < np; ++b)
      out.values(a, b) =
          std::abs(zbus(g.pmu_nodes[static_cast<size_t>(a)],
                        g.pmu_nodes[static_cast<size_t>(b)]));
  // enforce exact symmetry against LU round-off
  out.values = ((out.values + out.values.transpose()) * 0.5).eval();
  return out;
}

}  // namespace pmurec::grid
