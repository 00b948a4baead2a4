// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/grid.hpp"
#include "pmurec/layers.hpp"
#include "pmurec/numeric.hpp"

namespace pmurec::stnet {

struct STNetConfig {
  int gat_hidden = 16;
  std::array<int, 3> gcn_widths{32, 16, 2};
  double residual_alpha = 0.3;  // residual from the GAT output
  int gru_hidden = 16;
  int input_feats = 4;  // [x_mag, mask, x_ang, mask]
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  double leaky_slope = 0.2;
  double lr = 0.01;
  int batch_size = 300;
  int epochs = 20;
  double anchor_weight = 0.1;  // observed-entry term in the loss
};

/// Reconstruction model: two ST-blocks (edge-feature K-hop GAT, three
/// PEK-GCN layers with a GAT residual, batch norm, GRU-R across time),
/// followed by a linear output head. Node count independent: all weights
/// act on feature widths.
struct STNetModel {
  num::ParamStore params;
  STNetConfig cfg;
  int hops = 0;
};

STNetModel init_stnet(int hops, const STNetConfig& cfg, uint64_t seed);

/// Missing-rate features for node `i` at step `t`: fraction of missing
/// steps of `i` before `t`, and fraction of missing K-hop PMU neighbors
/// of `i` at `t`.
std::pair<double, double> missing_rate_features(const Matrix& mask,
                                                const grid::KHopOperatorSet& ops,
                                                int node, int t);

struct GateValues {
  double r = 0.0;
  double z = 0.0;
  double q = 0.0;
};

GateValues gru_gates(const num::ParamStore& params, const std::string& prefix,
                     double l_r, double l_z);

/// One GRU-R step for a single node: h = q*p + (1-q)*tanh(w_c(z*s) + u_c(r*h_prev)).
/// `prior_p` is the already-embedded 16-wide prior slice.
Eigen::RowVectorXd gru_r_step(const num::ParamStore& params,
                              const std::string& prefix,
                              const Eigen::RowVectorXd& h_spatial,
                              const Eigen::RowVectorXd& h_prev,
                              const Eigen::RowVectorXd& prior_p, double l_r,
                              double l_z);

struct GruStepCache {
  Vector l_r, l_z, e_r, e_z, e_q, r, z, q;  // per node
  Matrix spatial, h_prev, c_s, c_t, h_hat, prior_raw, p;
};

struct BlockCache {
  std::vector<Matrix> in_feats;
  std::vector<layers::GatCache> gat;
  std::vector<Matrix> gat_out;
  std::vector<layers::PekCache> gcn1, gcn2, gcn3;
  layers::BatchNormCache bn;
  std::vector<Matrix> bn_out;
  std::vector<GruStepCache> gru;
  std::vector<Matrix> h_seq;
};

struct ForwardCache {
  std::array<BlockCache, 2> blocks;
};

struct ForwardOptions {
  bool training = false;     // batch statistics vs running averages
  bool update_stats = true;  // refresh running averages in training mode
};

/// Full forward pass: returns the reconstruction (T x N per channel).
/// `prior` is the auxiliary low-rank output; nullptr substitutes zeros.
std::array<Matrix, 2> forward(STNetModel& model,
                              const grid::KHopOperatorSet& ops,
                              const grid::EdgeFeatureMatrix& edges,
                              const datagen::MeasurementWindow& w,
                              const std::array<Matrix, 2>* prior,
                              const ForwardOptions& opts,
                              ForwardCache* cache = nullptr);

void backward(STNetModel& model, const grid::KHopOperatorSet& ops,
              const grid::EdgeFeatureMatrix& edges, const ForwardCache& cache,
              const std::array<Matrix, 2>& d_out);

struct WindowLoss {
  double total = 0.0;
  double missing_term = 0.0;
  double anchor_term = 0.0;
};

/// MSE against `target` at missing positions plus anchor_weight times the
/// observed-position MSE; gradient contribution scaled by `scale`.
WindowLoss window_loss_grad(STNetModel& model, const grid::KHopOperatorSet& ops,
                            const grid::EdgeFeatureMatrix& edges,
                            const datagen::MeasurementWindow& w,
                            const std::array<Matrix, 2>* prior,
                            const std::array<Matrix, 2>& target, double scale,
                            const ForwardOptions& opts);

WindowLoss train_batch(STNetModel& model, const grid::KHopOperatorSet& ops,
                       const grid::EdgeFeatureMatrix& edges,
                       const std::vector<const datagen::MeasurementWindow*>& batch,
                       const std::vector<const std::array<Matrix, 2>*>& priors,
                       const std::vector<const std::array<Matrix, 2>*>& targets,
                       const num::AdamConfig& adam);

struct TrainRecord {
  long step = 0;
  double missing_term = 0.0;
  double anchor_term = 0.0;
  double total = 0.0;
};

/// Offline supervised training against x_true. `priors` must align with
/// `windows`; nullptr trains with the prior path zeroed (ablation).
std::vector<TrainRecord> train(STNetModel& model,
                               const std::vector<datagen::MeasurementWindow>& windows,
                               const std::vector<std::array<Matrix, 2>>* priors,
                               const grid::KHopOperatorSet& ops,
                               const grid::EdgeFeatureMatrix& edges,
                               uint64_t seed, std::ostream* log = nullptr);

}  // namespace pmurec::stnet
