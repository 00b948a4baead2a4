// SPDX-License-Identifier: Apache-2.0
#include "pmurec/online.hpp"

#include <cstdio>

namespace pmurec::online {

void StreamConfig::validate() const {
  if (adapt_steps < 1 || eval_steps < 1 || drift_delay < 1 ||
      batch_windows < 1 || pseudo_label_passes < 1)
    throw ValidationError("online: all counts must be >= 1");
  if (!(ewma_alpha > 0.0 && ewma_alpha < 1.0))
    throw ValidationError("online: ewma_alpha must lie in (0, 1)");
  if (pseudo_label_lr <= 0.0 || aux_lr <= 0.0)
    throw ValidationError("online: learning rates must be > 0");
}

DriftMonitorState drift_monitor(DriftMonitorState state, double observed_mse,
                                double alpha, double threshold) {
  if (threshold <= 0.0) throw ValidationError("online: threshold must be > 0");
  state.ewma = alpha * observed_mse + (1.0 - alpha) * state.ewma;
  if (state.ewma > threshold) {
    state.consecutive += 1;
    if (state.consecutive >= 3) state.triggered = true;
  } else {
    state.consecutive = 0;
  }
  return state;
}

double observed_entry_mse(const datagen::MeasurementWindow& w,
                          const std::array<Matrix, 2>& x_tilde) {
  const double n_obs = 2.0 * w.mask.sum();
  if (n_obs == 0.0) return 0.0;
  double se = 0.0;
  for (int ch = 0; ch < 2; ++ch) {
    const size_t ci = static_cast<size_t>(ch);
    se += w.mask.cwiseProduct(x_tilde[ci] - w.x_obs[ci]).squaredNorm();
  }
  return se / n_obs;
}

void self_supervised_update(lowrank::LowRankModel& aux,
                            const grid::KHopOperatorSet& ops,
                            const std::vector<const datagen::MeasurementWindow*>& batch,
                            double lr) {
  num::AdamConfig adam;
  adam.lr = lr;
  try {
    lowrank::train_batch(aux, ops, batch, adam, nullptr);
  } catch (const ComputeError& e) {
    std::fprintf(stderr, "online: aux update skipped: %s\n", e.what());
  }
}

void pseudo_label_finetune(stnet::STNetModel& st,
                           const lowrank::LowRankModel& aux,
                           const grid::KHopOperatorSet& ops,
                           const grid::EdgeFeatureMatrix& edges,
                           const std::vector<const datagen::MeasurementWindow*>& batch,
                           double lr) {
  num::AdamConfig adam;
  adam.lr = lr;
  std::vector<std::array<Matrix, 2>> priors, targets;
  priors.reserve(batch.size());
  targets.reserve(batch.size());
  for (const auto* w : batch) {
    const auto out = lowrank::infer(aux, ops, *w);
    priors.push_back(out.imputed);
    targets.push_back(
        pipeline::compose_reconstruction(w->x_obs, w->mask, out.imputed));
  }
  std::vector<const std::array<Matrix, 2>*> pp, tp;
  for (size_t i = 0; i < batch.size(); ++i) {
    pp.push_back(&priors[i]);
    tp.push_back(&targets[i]);
  }
  try {
    stnet::train_batch(st, ops, edges, batch, pp, tp, adam);
  } catch (const ComputeError& e) {
    std::fprintf(stderr, "online: pseudo-label update skipped: %s\n", e.what());
  }
}

namespace {

pipeline::ReconstructionReport evaluate_stage(
    const lowrank::LowRankModel& aux, stnet::STNetModel& st,
    const grid::KHopOperatorSet& ops, const grid::EdgeFeatureMatrix& edges,
    const std::vector<datagen::MeasurementWindow>& eval_windows,
    const std::string& stage, uint64_t seed) {
  pipeline::MetricAccumulator acc;
  stnet::ForwardOptions opts;  // eval mode
  opts.training = false;
  for (const auto& w : eval_windows) {
    const auto prior = lowrank::infer(aux, ops, w);
    const auto x_tilde = stnet::forward(st, ops, edges, w, &prior.imputed, opts);
    acc.add(w, pipeline::compose_reconstruction(w.x_obs, w.mask, x_tilde));
  }
  auto rep = acc.finish("online", "full", seed);
  rep.stage = stage;
  return rep;
}

}  // namespace

StagedReports run_online(const lowrank::LowRankModel& aux_offline,
                         const stnet::STNetModel& st_offline,
                         const grid::KHopOperatorSet& ops,
                         const grid::EdgeFeatureMatrix& edges,
                         const std::vector<datagen::MeasurementWindow>& adapt_windows,
                         const std::vector<datagen::MeasurementWindow>& eval_windows,
                         const StreamConfig& cfg, double offline_observed_mse,
                         uint64_t seed) {
  cfg.validate();
  const double threshold = cfg.drift_threshold > 0.0
                               ? cfg.drift_threshold
                               : 4.0 * offline_observed_mse;

  // mutable working copies; eval-mode forwards leave them untouched
  lowrank::LowRankModel aux = aux_offline;
  stnet::STNetModel st = st_offline;

  StagedReports out;
  out.initial = evaluate_stage(aux, st, ops, edges, eval_windows, "initial", seed);
  DriftMonitorState monitor;
  stnet::ForwardOptions eval_opts;
  eval_opts.training = false;

  for (size_t start = 0; start < adapt_windows.size();
       start += static_cast<size_t>(cfg.batch_windows)) {
    std::vector<const datagen::MeasurementWindow*> batch;
    for (size_t i = start;
         i < std::min(adapt_windows.size(), start + static_cast<size_t>(cfg.batch_windows));
         ++i)
      batch.push_back(&adapt_windows[i]);

    double mse_sum = 0.0;
    for (const auto* w : batch) {
      const auto prior = lowrank::infer(aux, ops, *w);
      const auto x_tilde = stnet::forward(st, ops, edges, *w, &prior.imputed, eval_opts);
      mse_sum += observed_entry_mse(*w, x_tilde);
    }
    monitor = drift_monitor(monitor, mse_sum / static_cast<double>(batch.size()),
                            cfg.ewma_alpha, threshold);
    self_supervised_update(aux, ops, batch, cfg.aux_lr);
  }
  out.drift_triggered = monitor.triggered;
  out.self_supervised = evaluate_stage(aux, st, ops, edges, eval_windows,
                                       "self_supervised", seed);

  if (monitor.triggered) {
    Rng rng(seed ^ 0x0a11ceULL);
    const int n_batches = static_cast<int>(
        (adapt_windows.size() + static_cast<size_t>(cfg.batch_windows) - 1) /
        static_cast<size_t>(cfg.batch_windows));
    for (int pass = 0; pass < cfg.pseudo_label_passes; ++pass) {
      const size_t start = static_cast<size_t>(rng.uniform_int(0, n_batches - 1)) *
                           static_cast<size_t>(cfg.batch_windows);
      std::vector<const datagen::MeasurementWindow*> batch;
      for (size_t i = start;
           i < std::min(adapt_windows.size(), start + static_cast<size_t>(cfg.batch_windows));
           ++i)
        batch.push_back(&adapt_windows[i]);
      pseudo_label_finetune(st, aux, ops, edges, batch, cfg.pseudo_label_lr);
    }
    out.pseudo_label_reached = true;
    out.pseudo_label = evaluate_stage(aux, st, ops, edges, eval_windows,
                                      "pseudo_label", seed);
  } else {
    out.pseudo_label_reached = false;
    out.pseudo_label.method = "online";
    out.pseudo_label.variant = "full";
    out.pseudo_label.stage = "pseudo_label";
    out.pseudo_label.seed = seed;
    out.pseudo_label.empty = true;  // stage not reached
  }
  return out;
}

}  // namespace pmurec::online
