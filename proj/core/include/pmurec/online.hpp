// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/grid.hpp"
#include "pmurec/lowrank.hpp"
#include "pmurec/pipeline.hpp"
#include "pmurec/stnet.hpp"

namespace pmurec::online {

struct StreamConfig {
  int adapt_steps = 800;  // stream windows used for adaptation
  int eval_steps = 200;   // held-out windows used for staged metrics
  int drift_delay = 40;   // windows generated pre-drift
  double ewma_alpha = 0.1;
  double drift_threshold = -1.0;  // < 0: 4x the offline observed-entry MSE
  double pseudo_label_lr = 0.005;
  double aux_lr = 0.005;
  int batch_windows = 10;
  int pseudo_label_passes = 100;
  // drift surrogate: generator changes applied after drift_delay
  double drift_freq_scale = 1.3;
  double drift_amp_scale = 1.5;
  double drift_base_shift = 0.03;

  void validate() const;
};

struct DriftMonitorState {
  double ewma = 0.0;
  int consecutive = 0;
  bool triggered = false;
};

/// EWMA update on the observed-entry MSE; the trigger latches after the
/// EWMA exceeds the threshold on 3 consecutive batches.
DriftMonitorState drift_monitor(DriftMonitorState state, double observed_mse,
                                double alpha, double threshold);

/// Observed-entry MSE of an ST-Net reconstruction (ground truth unused).
double observed_entry_mse(const datagen::MeasurementWindow& w,
                          const std::array<Matrix, 2>& x_tilde);

/// One unsupervised low-rank training step on a streaming batch. Reads
/// x_obs and mask only. Divergence skips the update and logs.
void self_supervised_update(lowrank::LowRankModel& aux,
                            const grid::KHopOperatorSet& ops,
                            const std::vector<const datagen::MeasurementWindow*>& batch,
                            double lr);

/// One ST-Net step toward targets composed from observations and the
/// auxiliary output: M.*x_obs + (1-M).*L. Never reads ground truth.
void pseudo_label_finetune(stnet::STNetModel& st,
                           const lowrank::LowRankModel& aux,
                           const grid::KHopOperatorSet& ops,
                           const grid::EdgeFeatureMatrix& edges,
                           const std::vector<const datagen::MeasurementWindow*>& batch,
                           double lr);

struct StagedReports {
  pipeline::ReconstructionReport initial;
  pipeline::ReconstructionReport self_supervised;
  pipeline::ReconstructionReport pseudo_label;
  bool pseudo_label_reached = false;
  bool drift_triggered = false;
};

/// Streaming protocol: evaluate the offline models, adapt the auxiliary
/// model over the adaptation windows (monitoring drift), re-evaluate,
/// then fine-tune ST-Net on pseudo-labels if the monitor fired and
/// evaluate once more. Ground truth is read only inside metric
/// computation.
StagedReports run_online(const lowrank::LowRankModel& aux_offline,
                         const stnet::STNetModel& st_offline,
                         const grid::KHopOperatorSet& ops,
                         const grid::EdgeFeatureMatrix& edges,
                         const std::vector<datagen::MeasurementWindow>& adapt_windows,
                         const std::vector<datagen::MeasurementWindow>& eval_windows,
                         const StreamConfig& cfg, double offline_observed_mse,
                         uint64_t seed);

}  // namespace pmurec::online
