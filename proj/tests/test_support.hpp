// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/grid.hpp"
#include "pmurec/rng.hpp"
#include "pmurec/types.hpp"

#ifndef PMUREC_DATA_DIR
#define PMUREC_DATA_DIR "data"
#endif

namespace testsup {

using pmurec::Matrix;
using pmurec::Vector;

inline std::string data_path(const std::string& rel) {
  return std::string(PMUREC_DATA_DIR) + "/" + rel;
}

// ---- independent all-pairs BFS oracle over a raw edge list ----
inline std::vector<std::vector<int>> bfs_all_pairs(
    int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (const auto& [a, b] : edges) {
    adj[static_cast<size_t>(a)].push_back(b);
    adj[static_cast<size_t>(b)].push_back(a);
  }
  std::vector<std::vector<int>> dist(
      static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), -1));
  for (int s = 0; s < n; ++s) {
    auto& d = dist[static_cast<size_t>(s)];
    d[static_cast<size_t>(s)] = 0;
    std::deque<int> q{s};
    while (!q.empty()) {
      const int u = q.front();
      q.pop_front();
      for (int v : adj[static_cast<size_t>(u)])
        if (d[static_cast<size_t>(v)] < 0) {
          d[static_cast<size_t>(v)] = d[static_cast<size_t>(u)] + 1;
          q.push_back(v);
        }
    }
  }
  return dist;
}

// ---- random connected graph + PMU subset ----
struct RandomGraph {
  pmurec::grid::GridGraph g;
  std::vector<std::pair<int, int>> edges;
};

inline RandomGraph random_connected_graph(pmurec::Rng& rng, int max_nodes) {
  const int n = rng.uniform_int(2, max_nodes);
  RandomGraph out;
  out.g.n_bus = n;
  std::vector<std::pair<int, int>> edges;
  for (int v = 1; v < n; ++v) {
    const int u = rng.uniform_int(0, v - 1);
    edges.emplace_back(std::min(u, v), std::max(u, v));
  }
  const int extra = rng.uniform_int(0, n);
  for (int e = 0; e < extra; ++e) {
    const int a = rng.uniform_int(0, n - 1);
    const int b = rng.uniform_int(0, n - 1);
    if (a == b) continue;
    const auto p = std::make_pair(std::min(a, b), std::max(a, b));
    if (std::find(edges.begin(), edges.end(), p) == edges.end())
      edges.push_back(p);
  }
  for (const auto& [a, b] : edges)
    out.g.edges.push_back({a, b, 1.0, -5.0});
  const int n_pmu = rng.uniform_int(1, n);
  std::vector<int> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  for (size_t i = all.size(); i > 1; --i)
    std::swap(all[i - 1], all[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  out.g.pmu_nodes.assign(all.begin(), all.begin() + n_pmu);
  std::sort(out.g.pmu_nodes.begin(), out.g.pmu_nodes.end());
  out.edges = std::move(edges);
  return out;
}

// ---- one-sided Jacobi SVD oracle (independent of the library path) ----
struct JacobiSvd {
  Matrix u;
  Vector s;
  Matrix v;
};

inline JacobiSvd one_sided_jacobi_svd(Matrix a) {
  const bool transposed = a.rows() < a.cols();
  if (transposed) a = a.transpose().eval();
  const Eigen::Index m = a.rows(), n = a.cols();
  Matrix v = Matrix::Identity(n, n);

  bool changed = true;
  int sweep = 0;
  while (changed && sweep < 100) {
    changed = false;
    ++sweep;
    for (Eigen::Index p = 0; p + 1 < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a.col(p).dot(a.col(q));
        const double app = a.col(p).squaredNorm();
        const double aqq = a.col(q).squaredNorm();
        if (std::abs(apq) <= 1e-15 * std::sqrt(app * aqq) || apq == 0.0) continue;
        changed = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < m; ++r) {
          const double xp = a(r, p), xq = a(r, q);
          a(r, p) = c * xp - s * xq;
          a(r, q) = s * xp + c * xq;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const double xp = v(r, p), xq = v(r, q);
          v(r, p) = c * xp - s * xq;
          v(r, q) = s * xp + c * xq;
        }
      }
  }

  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> norms(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) norms[static_cast<size_t>(i)] = a.col(i).norm();
  std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
    return norms[static_cast<size_t>(x)] > norms[static_cast<size_t>(y)];
  });

  JacobiSvd out;
  out.u.resize(m, n);
  out.v.resize(n, n);
  out.s.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index j = order[static_cast<size_t>(i)];
    out.s(i) = norms[static_cast<size_t>(j)];
    out.u.col(i) = out.s(i) > 1e-300 ? (a.col(j) / out.s(i)).eval()
                                     : Matrix::Zero(m, 1).col(0).eval();
    out.v.col(i) = v.col(j);
  }
  if (transposed) std::swap(out.u, out.v);
  return out;
}

// ---- window builders ----
inline pmurec::datagen::MeasurementWindow make_window(int t_len, int n,
                                                      double mag, double ang) {
  pmurec::datagen::MeasurementWindow w;
  w.x_true[0] = Matrix::Constant(t_len, n, mag);
  w.x_true[1] = Matrix::Constant(t_len, n, ang);
  w.x_obs = w.x_true;
  w.mask = Matrix::Ones(t_len, n);
  w.labels = pmurec::datagen::LabelMatrix::Zero(t_len, n);
  return w;
}

inline void drop_cell(pmurec::datagen::MeasurementWindow& w, int t, int i,
                      pmurec::datagen::MissPattern p =
                          pmurec::datagen::MissPattern::Random) {
  w.mask(t, i) = 0.0;
  w.labels(t, i) = static_cast<uint8_t>(p);
  w.x_obs[0](t, i) = 0.0;
  w.x_obs[1](t, i) = 0.0;
}

inline void apply_random_mask(pmurec::datagen::MeasurementWindow& w,
                              double rate, pmurec::Rng& rng) {
  for (int t = 0; t < w.steps(); ++t)
    for (int i = 0; i < w.nodes(); ++i)
      if (rng.uniform() < rate) drop_cell(w, t, i);
}

// Permutes a K-hop operator set so that new position i holds old position
// perm[i]; used by the equivariance tests.
inline pmurec::grid::KHopOperatorSet permute_ops(
    const pmurec::grid::KHopOperatorSet& ops, const std::vector<int>& perm) {
  const int np = ops.pmu_count();
  std::vector<int> inv(static_cast<size_t>(np));
  for (int i = 0; i < np; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;

  pmurec::grid::KHopOperatorSet out;
  out.max_hops = ops.max_hops;
  out.order.resize(static_cast<size_t>(np));
  for (int i = 0; i < np; ++i)
    out.order[static_cast<size_t>(i)] = ops.order[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  for (int k = 0; k < ops.max_hops; ++k) {
    const size_t ki = static_cast<size_t>(k);
    Matrix a(np, np), s(np, np);
    for (int i = 0; i < np; ++i)
      for (int j = 0; j < np; ++j) {
        a(i, j) = ops.adjacency[ki](perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        s(i, j) = ops.diffusion[ki](perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
      }
    out.adjacency.push_back(a);
    out.diffusion.push_back(s);
    Vector deg(np);
    for (int i = 0; i < np; ++i)
      deg(i) = ops.degree[ki](perm[static_cast<size_t>(i)]);
    out.degree.push_back(deg);
    std::vector<std::vector<int>> nbrs(static_cast<size_t>(np));
    for (int i = 0; i < np; ++i) {
      for (int j : ops.neighbors[ki][static_cast<size_t>(perm[static_cast<size_t>(i)])])
        nbrs[static_cast<size_t>(i)].push_back(inv[static_cast<size_t>(j)]);
      std::sort(nbrs[static_cast<size_t>(i)].begin(), nbrs[static_cast<size_t>(i)].end());
    }
    out.neighbors.push_back(std::move(nbrs));
  }
  out.hop_union.resize(static_cast<size_t>(np));
  for (int i = 0; i < np; ++i) {
    for (int j : ops.hop_union[static_cast<size_t>(perm[static_cast<size_t>(i)])])
      out.hop_union[static_cast<size_t>(i)].push_back(inv[static_cast<size_t>(j)]);
    std::sort(out.hop_union[static_cast<size_t>(i)].begin(),
              out.hop_union[static_cast<size_t>(i)].end());
  }
  for (int i : ops.isolated) out.isolated.push_back(inv[static_cast<size_t>(i)]);
  std::sort(out.isolated.begin(), out.isolated.end());
  return out;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace testsup
