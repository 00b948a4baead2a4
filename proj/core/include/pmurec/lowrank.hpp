// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/grid.hpp"
#include "pmurec/layers.hpp"
#include "pmurec/numeric.hpp"

namespace pmurec::lowrank {

/// Sum of singular values.
double nuclear_norm(const Matrix& a);

/// Sum over all min(m,n) singular values of log(sigma_i + eps).
double regularized_nuclear_norm(const Matrix& a, double eps);

/// Gradients w.r.t. the matrix: sum_i u_i v_i^T (plain) and
/// sum_i u_i v_i^T / (sigma_i + eps) (regularized). Components with
/// sigma_i <= 1e-9 * sigma_1 take the zero subgradient; the direction
/// u_i v_i^T is not determined there and the slope would otherwise blow
/// up as 1/eps.
Matrix nuclear_norm_grad(const Matrix& a);
Matrix regularized_nuclear_norm_grad(const Matrix& a, double eps);

struct LowRankConfig {
  int attn_hidden = 64;
  double dropout = 0.1;
  int gcn_hidden = 2;
  // upper end of the (0, 1e-2] range: at 1e-6 the log floor rewards exact
  // rank collapse more than the fidelity term can pay for a 1-p.u. fit
  double eps = 1e-2;
  // 50 rather than 10: the fidelity pull must clear the log-norm pull
  // 1/(sigma+eps) near the rank-collapsed surface or training never
  // leaves it (at 10 the two roughly cancel and the model stays at L=0)
  double lambda_fid = 50.0;
  double leaky_slope = 0.2;
  double lr = 0.005;
  int batch_size = 300;
  int epochs = 30;
  enum class NormKind { Regularized, Nuclear };
  NormKind norm = NormKind::Regularized;
};

/// Unsupervised imputation model: row self-attention, K-hop GAT, two
/// PEK-GCN blocks bottlenecked at width 2, and a projection back to T
/// columns. Graph weights (GAT, PEK-GCN) are shared across the two
/// channels; the attention and output projections are per channel, since
/// the magnitude and angle levels differ by an order of magnitude.
struct LowRankModel {
  num::ParamStore params;
  LowRankConfig cfg;
  int window_len = 0;
  int n_nodes = 0;
  int hops = 0;
};

LowRankModel init_lowrank(int window_len, const grid::KHopOperatorSet& ops,
                          const LowRankConfig& cfg, uint64_t seed);

struct ChannelCache {
  layers::AttentionCache attn;
  Matrix attn_out;             // T x N
  layers::GatCache gat;        // on N x T node features
  layers::PekCache gcn1, gcn2;
  Matrix bottleneck;           // N x 2
  Matrix out_nt;               // N x T before the final transpose
};

/// Forward for one channel matrix (T x N). Training mode enables
/// attention dropout (drawn from `drop_rng`).
Matrix channel_forward(const LowRankModel& model,
                       const grid::KHopOperatorSet& ops, const Matrix& x,
                       int channel = 0, bool training = false,
                       Rng* drop_rng = nullptr, ChannelCache* cache = nullptr);

/// Accumulates parameter gradients from d(loss)/d(output).
void channel_backward(LowRankModel& model, const grid::KHopOperatorSet& ops,
                      const ChannelCache& cache, const Matrix& d_out,
                      int channel = 0);

struct LowRankOutput {
  std::array<Matrix, 2> imputed;  // T x N per channel
  double norm_term = 0.0;
  double fidelity_term = 0.0;
};

/// Eval-mode inference on a window (reads x_obs and mask only).
LowRankOutput infer(const LowRankModel& model, const grid::KHopOperatorSet& ops,
                    const datagen::MeasurementWindow& w);

struct WindowLoss {
  double total = 0.0;
  double norm_term = 0.0;
  double fid_term = 0.0;
};

/// Loss (regularized norm + lambda_fid * observed fidelity) and gradient
/// contribution for one window; gradients are scaled by `scale` so batch
/// means are exact. Never reads x_true.
WindowLoss window_loss_grad(LowRankModel& model,
                            const grid::KHopOperatorSet& ops,
                            const datagen::MeasurementWindow& w, double scale,
                            bool training, Rng* drop_rng);

/// Eval-mode loss only.
WindowLoss window_loss(const LowRankModel& model,
                       const grid::KHopOperatorSet& ops,
                       const datagen::MeasurementWindow& w);

/// One optimizer step on a batch; returns the mean batch loss.
/// Used both by offline training and online self-supervised adaptation.
WindowLoss train_batch(LowRankModel& model, const grid::KHopOperatorSet& ops,
                       const std::vector<const datagen::MeasurementWindow*>& batch,
                       const num::AdamConfig& adam, Rng* drop_rng);

struct TrainRecord {
  long step = 0;
  double norm_term = 0.0;
  double fid_term = 0.0;
  double total = 0.0;
};

/// Full training loop; deterministic in `seed`. Writes a CSV log
/// (step,norm_term,fidelity_term,total) when `log` is given.
std::vector<TrainRecord> train(LowRankModel& model,
                               const std::vector<datagen::MeasurementWindow>& windows,
                               const grid::KHopOperatorSet& ops, uint64_t seed,
                               std::ostream* log = nullptr);

}  // namespace pmurec::lowrank
