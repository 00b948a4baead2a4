// SPDX-License-Identifier: Apache-2.0
#include "pmurec/experiment.hpp"

#include <algorithm>

namespace pmurec::pipeline {

DatasetSplits build_splits(const grid::GridGraph& g, const ExperimentConfig& cfg,
                           uint64_t seed, bool inject_train) {
  auto windows = datagen::generate_windows(g, cfg.modal, cfg.data.n_windows, seed);
  DatasetSplits out;
  if (inject_train) {
    const auto sched = datagen::make_default_schedule(
        cfg.data.n_windows, cfg.modal.window_len, g.pmu_count(),
        cfg.missing.random_rate, cfg.missing.target_rate, cfg.missing.event_len,
        seed ^ 0xb10cULL);
    out.realized_rate = datagen::inject_missing(windows, sched);
    const auto splits = datagen::split_indices(windows, cfg.data.ratios);
    for (size_t i : splits[0]) out.train.push_back(windows[i]);
    for (size_t i : splits[1]) out.test.push_back(windows[i]);
    for (size_t i : splits[2]) out.val.push_back(windows[i]);
  } else {
    const auto splits = datagen::split_indices(windows, cfg.data.ratios);
    for (size_t i : splits[0]) out.train.push_back(windows[i]);
    for (size_t i : splits[1]) out.test.push_back(windows[i]);
    for (size_t i : splits[2]) out.val.push_back(windows[i]);
    const auto sched = datagen::make_default_schedule(
        static_cast<int>(out.test.size()), cfg.modal.window_len, g.pmu_count(),
        cfg.missing.random_rate, cfg.missing.target_rate, cfg.missing.event_len,
        seed ^ 0xb10cULL);
    out.realized_rate = datagen::inject_missing(out.test, sched);
  }
  return out;
}

TrainedModels train_models(const ExperimentConfig& cfg,
                           const grid::KHopOperatorSet& ops,
                           const grid::EdgeFeatureMatrix& edges,
                           const std::vector<datagen::MeasurementWindow>& train_windows,
                           uint64_t seed, bool skip_aux) {
  TrainedModels models;
  models.has_aux = !skip_aux;
  if (!skip_aux) {
    models.aux = lowrank::init_lowrank(cfg.modal.window_len, ops, cfg.aux, seed);
    lowrank::train(models.aux, train_windows, ops, seed + 1);
  }

  std::vector<std::array<Matrix, 2>> priors;
  if (!skip_aux) {
    priors.reserve(train_windows.size());
    for (const auto& w : train_windows)
      priors.push_back(lowrank::infer(models.aux, ops, w).imputed);
  }

  models.st = stnet::init_stnet(ops.max_hops, cfg.st, seed + 2);
  stnet::train(models.st, train_windows, skip_aux ? nullptr : &priors, ops,
               edges, seed + 3);
  return models;
}

ReconstructionReport evaluate_model(TrainedModels& models,
                                    const grid::KHopOperatorSet& ops,
                                    const grid::EdgeFeatureMatrix& edges,
                                    const std::vector<datagen::MeasurementWindow>& windows,
                                    const std::string& method,
                                    const std::string& variant, uint64_t seed) {
  MetricAccumulator acc;
  stnet::ForwardOptions opts;
  opts.training = false;
  for (const auto& w : windows) {
    std::array<Matrix, 2> x_tilde;
    if (models.has_aux) {
      const auto prior = lowrank::infer(models.aux, ops, w);
      x_tilde = stnet::forward(models.st, ops, edges, w, &prior.imputed, opts);
    } else {
      x_tilde = stnet::forward(models.st, ops, edges, w, nullptr, opts);
    }
    acc.add(w, compose_reconstruction(w.x_obs, w.mask, x_tilde));
  }
  return acc.finish(method, variant, seed);
}

double observed_mse_on(TrainedModels& models, const grid::KHopOperatorSet& ops,
                       const grid::EdgeFeatureMatrix& edges,
                       const std::vector<datagen::MeasurementWindow>& windows) {
  stnet::ForwardOptions opts;
  opts.training = false;
  double sum = 0.0;
  for (const auto& w : windows) {
    std::array<Matrix, 2> x_tilde;
    if (models.has_aux) {
      const auto prior = lowrank::infer(models.aux, ops, w);
      x_tilde = stnet::forward(models.st, ops, edges, w, &prior.imputed, opts);
    } else {
      x_tilde = stnet::forward(models.st, ops, edges, w, nullptr, opts);
    }
    sum += online::observed_entry_mse(w, x_tilde);
  }
  return windows.empty() ? 0.0 : sum / static_cast<double>(windows.size());
}

ReconstructionReport run_experiment(const ExperimentConfig& cfg,
                                    const std::string& variant, uint64_t seed) {
  if (variant != "full" && variant != "v1" && variant != "v2")
    throw ValidationError("run_experiment: variant must be full|v1|v2");
  grid::GridGraph g = grid::load_grid(cfg.grid_path);

  if (variant == "v1") {
    // standard 1-hop GNN over a fully observed system
    grid::GridGraph g_all = g;
    g_all.pmu_nodes.clear();
    for (int i = 0; i < g.n_bus; ++i) g_all.pmu_nodes.push_back(i);
    const auto ops = grid::build_khop_operators(g_all, 1);
    const auto edges = grid::impedance_edge_features(g_all, cfg.shunt_eps);
    auto splits = build_splits(g_all, cfg, seed, /*inject_train=*/false);
    auto models = train_models(cfg, ops, edges, splits.train, seed, false);
    return evaluate_model(models, ops, edges, splits.test, "model", variant, seed);
  }

  const auto ops = grid::build_khop_operators(g, cfg.k_hops);
  const auto edges = grid::impedance_edge_features(g, cfg.shunt_eps);
  auto splits = build_splits(g, cfg, seed, /*inject_train=*/true);
  auto models =
      train_models(cfg, ops, edges, splits.train, seed, /*skip_aux=*/variant == "v2");
  return evaluate_model(models, ops, edges, splits.test, "model", variant, seed);
}

StreamBundle build_stream(const grid::GridGraph& g, const ExperimentConfig& cfg,
                          uint64_t seed) {
  const auto& sc = cfg.stream;
  const int total = sc.adapt_steps + sc.eval_steps;
  const int pre = std::min(sc.drift_delay, total);

  std::vector<datagen::MeasurementWindow> stream =
      datagen::generate_windows(g, cfg.modal, pre, seed ^ 0x57e0a ^ 1);
  if (pre < total) {
    datagen::ModalConfig drifted = cfg.modal;
    drifted.freq_min = std::min(cfg.modal.freq_min * sc.drift_freq_scale,
                                cfg.modal.sample_rate / 2.0 - 1e-6);
    drifted.freq_max = std::min(cfg.modal.freq_max * sc.drift_freq_scale,
                                cfg.modal.sample_rate / 2.0 - 1e-6);
    drifted.amp_scale = cfg.modal.amp_scale * sc.drift_amp_scale;
    drifted.mag_base_shift = cfg.modal.mag_base_shift + sc.drift_base_shift;
    auto post = datagen::generate_windows(g, drifted, total - pre, seed ^ 0x57e0a ^ 2);
    for (auto& w : post) {
      w.id += pre;
      stream.push_back(std::move(w));
    }
  }

  const auto sched = datagen::make_default_schedule(
      total, cfg.modal.window_len, g.pmu_count(), cfg.missing.random_rate,
      cfg.missing.target_rate, cfg.missing.event_len, seed ^ 0x57e0bULL);
  datagen::inject_missing(stream, sched);

  StreamBundle out;
  out.adapt.assign(stream.begin(), stream.begin() + sc.adapt_steps);
  out.eval.assign(stream.begin() + sc.adapt_steps, stream.end());
  return out;
}

}  // namespace pmurec::pipeline
