// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pmurec/config.hpp"
#include "pmurec/online.hpp"
#include "pmurec/pipeline.hpp"

namespace pmurec::pipeline {

struct DatasetSplits {
  std::vector<datagen::MeasurementWindow> train, test, val;
  double realized_rate = 0.0;
};

/// In-memory dataset build: generate, inject (with the default schedule
/// scaled to the stream), hash-split. When inject_train is false the
/// train/val windows stay fully observed and only the test stream gets
/// the schedule (the fully-observed ablation protocol).
DatasetSplits build_splits(const grid::GridGraph& g, const ExperimentConfig& cfg,
                           uint64_t seed, bool inject_train = true);

struct TrainedModels {
  lowrank::LowRankModel aux;
  stnet::STNetModel st;
  bool has_aux = false;
};

/// Train the auxiliary model (unless skip_aux) and ST-Net on the given
/// split; deterministic in `seed`.
TrainedModels train_models(const ExperimentConfig& cfg,
                           const grid::KHopOperatorSet& ops,
                           const grid::EdgeFeatureMatrix& edges,
                           const std::vector<datagen::MeasurementWindow>& train_windows,
                           uint64_t seed, bool skip_aux);

/// Evaluate a trained model on windows; method/variant label the report.
ReconstructionReport evaluate_model(TrainedModels& models,
                                    const grid::KHopOperatorSet& ops,
                                    const grid::EdgeFeatureMatrix& edges,
                                    const std::vector<datagen::MeasurementWindow>& windows,
                                    const std::string& method,
                                    const std::string& variant, uint64_t seed);

/// Full ablation protocol for one variant:
///   full: K-hop operators, PMU placement, missing data, aux prior.
///   v1:   1-hop operators over all buses, fully observed training.
///   v2:   prior replaced by zeros, aux training skipped.
/// Variants share `seed` for paired comparison.
ReconstructionReport run_experiment(const ExperimentConfig& cfg,
                                    const std::string& variant, uint64_t seed);

/// Observed-entry MSE of the trained ST-Net over windows (threshold
/// reference for the online drift monitor).
double observed_mse_on(TrainedModels& models, const grid::KHopOperatorSet& ops,
                       const grid::EdgeFeatureMatrix& edges,
                       const std::vector<datagen::MeasurementWindow>& windows);

struct StreamBundle {
  std::vector<datagen::MeasurementWindow> adapt, eval;
};

/// Streaming windows with a mid-stream generator shift after
/// cfg.stream.drift_delay windows; the default missing schedule runs over
/// the whole stream.
StreamBundle build_stream(const grid::GridGraph& g, const ExperimentConfig& cfg,
                          uint64_t seed);

}  // namespace pmurec::pipeline
