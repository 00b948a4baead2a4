// SPDX-License-Identifier: Apache-2.0
#include "pmurec/lowrank.hpp"

#include <cmath>
#include <ostream>

namespace pmurec::lowrank {

double nuclear_norm(const Matrix& a) { return num::svd(a).s.sum(); }

double regularized_nuclear_norm(const Matrix& a, double eps) {
  if (eps <= 0.0) throw ValidationError("regularized norm: eps must be > 0");
  return (num::svd(a).s.array() + eps).log().sum();
}

namespace {

constexpr double kSubgradTol = 1e-9;  // relative to sigma_1

Matrix norm_grad_impl(const Matrix& a, bool regularized, double eps) {
  const auto dec = num::svd(a);
  const double tol = kSubgradTol * (dec.s.size() > 0 ? dec.s(0) : 0.0);
  Matrix grad = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < dec.s.size(); ++i) {
    if (dec.s(i) <= tol) continue;
    const double w = regularized ? 1.0 / (dec.s(i) + eps) : 1.0;
    grad += w * dec.u.col(i) * dec.v.col(i).transpose();
  }
  return grad;
}

}  // namespace

Matrix nuclear_norm_grad(const Matrix& a) { return norm_grad_impl(a, false, 0.0); }

Matrix regularized_nuclear_norm_grad(const Matrix& a, double eps) {
  if (eps <= 0.0) throw ValidationError("regularized norm: eps must be > 0");
  return norm_grad_impl(a, true, eps);
}

LowRankModel init_lowrank(int window_len, const grid::KHopOperatorSet& ops,
                          const LowRankConfig& cfg, uint64_t seed) {
  const int n_nodes = ops.pmu_count();
  const int hops = ops.max_hops;
  if (window_len < 1 || n_nodes < 1 || hops < 1)
    throw ValidationError("lowrank: bad model dimensions");
  if (!(cfg.eps > 0.0 && cfg.eps <= 1e-2))
    throw ValidationError("lowrank: eps must lie in (0, 1e-2]");
  LowRankModel model;
  model.cfg = cfg;
  model.window_len = window_len;
  model.n_nodes = n_nodes;
  model.hops = hops;
  Rng rng(seed);

  auto& p = model.params;
  const int t = window_len, n = n_nodes, d = cfg.attn_hidden, g = cfg.gcn_hidden;
  for (int ch = 0; ch < 2; ++ch) {
    const std::string ap = "attn" + std::to_string(ch);
    p.add(ap + ".wq", layers::xavier(rng, n, d));
    p.add(ap + ".wk", layers::xavier(rng, n, d));
    p.add(ap + ".wv", layers::xavier(rng, n, d));
    p.add(ap + ".wo", layers::xavier(rng, d, n));
  }
  for (int k = 1; k <= hops; ++k) {
    const std::string hp = ".h" + std::to_string(k);
    p.add("gat" + hp + ".w1", layers::xavier(rng, t, t));
    p.add("gat" + hp + ".w2", layers::xavier(rng, t, t));
    p.add("gat" + hp + ".a", layers::xavier(rng, 2 * t, 1));
    p.add("gcn1" + hp + ".w", layers::xavier(rng, t, g));
    p.add("gcn2" + hp + ".w", layers::xavier(rng, g, g));
  }
  p.add("gcn1.fuse", layers::xavier(rng, hops * g, g));
  p.add("gcn1.bias", Matrix::Zero(1, g));
  p.add("gcn2.fuse", layers::xavier(rng, hops * g, g));
  p.add("gcn2.bias", Matrix::Zero(1, g));
  for (int ch = 0; ch < 2; ++ch) {
    const std::string op = "out" + std::to_string(ch);
    p.add(op + ".w", layers::xavier(rng, g, t));
    p.add(op + ".b", Matrix::Zero(1, t));
  }

  // Scale calibration on a ones probe: the stacked rectifier bottleneck
  // otherwise opens with outputs deep in the stiff region of the log
  // norm, where rank collapse swallows the fidelity signal.
  for (int ch = 0; ch < 2; ++ch) {
    const Matrix probe_out =
        channel_forward(model, ops, Matrix::Ones(t, n_nodes), ch);
    const double scale = probe_out.cwiseAbs().maxCoeff();
    if (scale > 1e-12 && scale < 0.5)
      p.value("out" + std::to_string(ch) + ".w") *= 0.5 / scale;
  }
  return model;
}

Matrix channel_forward(const LowRankModel& model,
                       const grid::KHopOperatorSet& ops, const Matrix& x,
                       int channel, bool training, Rng* drop_rng,
                       ChannelCache* cache) {
  if (x.rows() != model.window_len || x.cols() != model.n_nodes)
    throw ValidationError("lowrank: window shape does not match model");
  ChannelCache local;
  ChannelCache& c = cache != nullptr ? *cache : local;
  const std::string ap = "attn" + std::to_string(channel);
  const std::string op = "out" + std::to_string(channel);

  c.attn_out = layers::attention_forward(model.params, ap, x, training,
                                         model.cfg.dropout, drop_rng, &c.attn);
  const Matrix h0 = c.attn_out.transpose();
  const Matrix gat_out = layers::gat_forward(model.params, "gat", ops, h0,
                                             nullptr, model.cfg.leaky_slope,
                                             &c.gat);
  const Matrix g1 = layers::pek_forward(model.params, "gcn1", ops, gat_out, &c.gcn1);
  c.bottleneck = layers::pek_forward(model.params, "gcn2", ops, g1, &c.gcn2);
  c.out_nt = c.bottleneck * model.params.value(op + ".w");
  c.out_nt.rowwise() += model.params.value(op + ".b").row(0);
  return c.out_nt.transpose();
}

void channel_backward(LowRankModel& model, const grid::KHopOperatorSet& ops,
                      const ChannelCache& cache, const Matrix& d_out,
                      int channel) {
  auto& p = model.params;
  const std::string ap = "attn" + std::to_string(channel);
  const std::string op = "out" + std::to_string(channel);
  const Matrix d_nt = d_out.transpose();
  p.grad(op + ".w") += cache.bottleneck.transpose() * d_nt;
  p.grad(op + ".b").row(0) += d_nt.colwise().sum();
  Matrix d = d_nt * p.value(op + ".w").transpose();
  d = layers::pek_backward(p, "gcn2", ops, cache.gcn2, d);
  d = layers::pek_backward(p, "gcn1", ops, cache.gcn1, d);
  d = layers::gat_backward(p, "gat", ops, cache.gat, d, nullptr,
                           model.cfg.leaky_slope);
  layers::attention_backward(p, ap, cache.attn, d.transpose());
}

namespace {

// Observed-mean fill for the network input: a zero sentinel would make
// the imputation scale with local observed density.
Matrix mean_filled(const Matrix& x_obs, const Matrix& mask) {
  const double n_obs = mask.sum();
  const double mean = n_obs > 0.0 ? x_obs.sum() / n_obs : 0.0;
  return x_obs + mean * (1.0 - mask.array()).matrix();
}

}  // namespace

LowRankOutput infer(const LowRankModel& model, const grid::KHopOperatorSet& ops,
                    const datagen::MeasurementWindow& w) {
  LowRankOutput out;
  for (int ch = 0; ch < 2; ++ch) {
    const Matrix l = channel_forward(
        model, ops, mean_filled(w.x_obs[static_cast<size_t>(ch)], w.mask), ch);
    out.norm_term += model.cfg.norm == LowRankConfig::NormKind::Regularized
                         ? regularized_nuclear_norm(l, model.cfg.eps)
                         : nuclear_norm(l);
    const double n_obs = w.mask.sum();
    if (n_obs > 0.0) {
      const Matrix diff =
          w.mask.cwiseProduct(l - w.x_obs[static_cast<size_t>(ch)]);
      out.fidelity_term += diff.squaredNorm() / n_obs;
    }
    out.imputed[static_cast<size_t>(ch)] = l;
  }
  return out;
}

namespace {

WindowLoss loss_impl(LowRankModel& model, const grid::KHopOperatorSet& ops,
                     const datagen::MeasurementWindow& w, double scale,
                     bool training, Rng* drop_rng, bool want_grad) {
  WindowLoss loss;
  const double n_obs = w.mask.sum();
  for (int ch = 0; ch < 2; ++ch) {
    ChannelCache cache;
    const Matrix& x_obs = w.x_obs[static_cast<size_t>(ch)];
    const Matrix x_in = mean_filled(x_obs, w.mask);
    const Matrix l = channel_forward(model, ops, x_in, ch, training, drop_rng,
                                     want_grad ? &cache : nullptr);
    const bool reg = model.cfg.norm == LowRankConfig::NormKind::Regularized;
    loss.norm_term += reg ? regularized_nuclear_norm(l, model.cfg.eps)
                          : nuclear_norm(l);
    Matrix d_l;
    if (want_grad)
      d_l = reg ? regularized_nuclear_norm_grad(l, model.cfg.eps)
                : nuclear_norm_grad(l);
    if (n_obs > 0.0) {
      const Matrix diff = w.mask.cwiseProduct(l - x_obs);
      loss.fid_term += model.cfg.lambda_fid * diff.squaredNorm() / n_obs;
      if (want_grad) d_l += model.cfg.lambda_fid * (2.0 / n_obs) * diff;
    }
    if (want_grad) channel_backward(model, ops, cache, (scale * d_l).eval(), ch);
  }
  loss.total = loss.norm_term + loss.fid_term;
  return loss;
}

}  // namespace

WindowLoss window_loss_grad(LowRankModel& model,
                            const grid::KHopOperatorSet& ops,
                            const datagen::MeasurementWindow& w, double scale,
                            bool training, Rng* drop_rng) {
  return loss_impl(model, ops, w, scale, training, drop_rng, true);
}

WindowLoss window_loss(const LowRankModel& model,
                       const grid::KHopOperatorSet& ops,
                       const datagen::MeasurementWindow& w) {
  return loss_impl(const_cast<LowRankModel&>(model), ops, w, 0.0, false,
                   nullptr, false);
}

WindowLoss train_batch(LowRankModel& model, const grid::KHopOperatorSet& ops,
                       const std::vector<const datagen::MeasurementWindow*>& batch,
                       const num::AdamConfig& adam, Rng* drop_rng) {
  if (batch.empty()) throw ValidationError("lowrank: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  WindowLoss mean;
  for (const auto* w : batch) {
    const WindowLoss wl =
        window_loss_grad(model, ops, *w, scale, drop_rng != nullptr, drop_rng);
    mean.total += scale * wl.total;
    mean.norm_term += scale * wl.norm_term;
    mean.fid_term += scale * wl.fid_term;
  }
  if (!std::isfinite(mean.total))
    throw ComputeError("lowrank: training diverged (non-finite loss)");
  num::adam_step(model.params, adam);
  if (!model.params.all_finite())
    throw ComputeError("lowrank: non-finite parameters after update");
  return mean;
}

std::vector<TrainRecord> train(LowRankModel& model,
                               const std::vector<datagen::MeasurementWindow>& windows,
                               const grid::KHopOperatorSet& ops, uint64_t seed,
                               std::ostream* log) {
  if (windows.empty()) throw ValidationError("lowrank: no training windows");
  num::AdamConfig adam;
  adam.lr = model.cfg.lr;
  Rng rng(seed);
  Rng drop_rng = rng.fork(1);

  std::vector<size_t> order(windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<TrainRecord> records;
  if (log != nullptr) *log << "step,norm_term,fidelity_term,total\n";
  long step = 0;
  const int batch_size =
      std::min<int>(model.cfg.batch_size, static_cast<int>(windows.size()));
  for (int epoch = 0; epoch < model.cfg.epochs; ++epoch) {
    Rng shuffle = rng.fork(100 + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int>(i) - 1))]);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      std::vector<const datagen::MeasurementWindow*> batch;
      for (size_t b = start; b < std::min(order.size(), start + static_cast<size_t>(batch_size)); ++b)
        batch.push_back(&windows[order[b]]);
      const WindowLoss wl = train_batch(model, ops, batch, adam, &drop_rng);
      ++step;
      records.push_back({step, wl.norm_term, wl.fid_term, wl.total});
      if (log != nullptr)
        *log << step << ',' << wl.norm_term << ',' << wl.fid_term << ','
             << wl.total << "\n";
    }
  }
  return records;
}

}  // namespace pmurec::lowrank
