// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pmurec/grid.hpp"
#include "pmurec/numeric.hpp"
#include "pmurec/rng.hpp"
#include "pmurec/types.hpp"

// Forward/adjoint pairs for the graph and attention layers. Backward
// functions accumulate (+=) into the store's grad slots and return the
// gradient w.r.t. the layer input.
namespace pmurec::layers {

Matrix xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// ---- scaled-dot-product attention over matrix rows ----
// Parameters under `prefix`: .wq .wk .wv (N x d), .wo (d x N).
struct AttentionCache {
  Matrix x, q, k, v;
  Matrix probs;          // row-softmax of scores
  Matrix probs_used;     // after dropout in training mode
  Matrix drop_keep;      // 0/1 keep mask
  Matrix ctx;            // probs_used * v
  bool training = false;
  double dropout = 0.0;
};

Matrix attention_forward(const num::ParamStore& params, const std::string& prefix,
                         const Matrix& x, bool training, double dropout,
                         Rng* drop_rng, AttentionCache* cache);

Matrix attention_backward(num::ParamStore& params, const std::string& prefix,
                          const AttentionCache& cache, const Matrix& d_out);

// ---- K-hop graph attention ----
// Per hop k (1-based), parameters under `prefix.h<k>`: .w1 .w2 (F x F'),
// .a ((2F' [+1 with edge features]) x 1). Scores are leaky-rectified,
// softmax-normalized over the exact-distance-k neighbor set; a node with
// no hop-k neighbor attends to itself only. Per-hop outputs are averaged.
struct GatHopCache {
  Matrix g1, g2;
  std::vector<std::vector<double>> score;  // pre-activation, aligned to neighbors
  std::vector<std::vector<double>> alpha;
  Matrix agg;  // pre-ReLU
};

struct GatCache {
  Matrix input;
  std::vector<GatHopCache> hops;
};

Matrix gat_forward(const num::ParamStore& params, const std::string& prefix,
                   const grid::KHopOperatorSet& ops, const Matrix& h,
                   const Matrix* edge_features, double leaky_slope,
                   GatCache* cache);

Matrix gat_backward(num::ParamStore& params, const std::string& prefix,
                    const grid::KHopOperatorSet& ops, const GatCache& cache,
                    const Matrix& d_out, const Matrix* edge_features,
                    double leaky_slope);

// ---- PEK-GCN block ----
// Per hop: branch_k = ReLU(S_k H W_k); branches concatenated and fused:
// out = [branch_1 .. branch_K] W_fuse + bias. Parameters under `prefix`:
// .h<k>.w (F x F'), .fuse (K*F' x F'), .bias (1 x F').
struct PekCache {
  Matrix input;
  std::vector<Matrix> smoothed;  // S_k H
  std::vector<Matrix> pre;       // S_k H W_k, pre-ReLU
  Matrix concat;
};

Matrix pek_forward(const num::ParamStore& params, const std::string& prefix,
                   const grid::KHopOperatorSet& ops, const Matrix& h,
                   PekCache* cache);

Matrix pek_backward(num::ParamStore& params, const std::string& prefix,
                    const grid::KHopOperatorSet& ops, const PekCache& cache,
                    const Matrix& d_out);

// ---- batch normalization over rows ----
// Parameters under `prefix`: .gamma .beta (1 x C); running statistics are
// stored as non-trainable entries .run_mean .run_var (updated in training
// mode when update_stats is set, used in eval mode).
struct BatchNormCache {
  Matrix x;
  Matrix x_hat;
  Eigen::RowVectorXd mean, var;
  double eps = 1e-5;
};

Matrix batchnorm_forward(num::ParamStore& params, const std::string& prefix,
                         const Matrix& x, bool training, bool update_stats,
                         double momentum, double eps, BatchNormCache* cache);

Matrix batchnorm_backward(num::ParamStore& params, const std::string& prefix,
                          const BatchNormCache& cache, const Matrix& d_out);

}  // namespace pmurec::layers
