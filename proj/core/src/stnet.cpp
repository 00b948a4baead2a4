// SPDX-License-Identifier: Apache-2.0
#include "pmurec/stnet.hpp"

#include <cmath>
#include <ostream>

namespace pmurec::stnet {

namespace {

std::string blk(int b) { return "b" + std::to_string(b + 1); }

void check_finite(const Matrix& m, const std::string& layer) {
  if (!m.allFinite())
    throw ComputeError("stnet: non-finite activation in layer '" + layer + "'");
}

}  // namespace

STNetModel init_stnet(int hops, const STNetConfig& cfg, uint64_t seed) {
  if (hops < 1) throw ValidationError("stnet: hops must be >= 1");
  if (!(cfg.residual_alpha >= 0.0 && cfg.residual_alpha <= 1.0))
    throw ValidationError("stnet: residual_alpha must lie in [0, 1]");
  STNetModel model;
  model.cfg = cfg;
  model.hops = hops;
  Rng rng(seed);
  auto& p = model.params;

  const int gh = cfg.gat_hidden;
  const int hid = cfg.gru_hidden;
  const std::array<int, 4> widths{gh, cfg.gcn_widths[0], cfg.gcn_widths[1],
                                  cfg.gcn_widths[2]};
  for (int b = 0; b < 2; ++b) {
    const std::string bp = blk(b);
    const int f_in = cfg.input_feats;
    for (int k = 1; k <= hops; ++k) {
      const std::string hp = ".h" + std::to_string(k);
      p.add(bp + ".gat" + hp + ".w1", layers::xavier(rng, f_in, gh));
      p.add(bp + ".gat" + hp + ".w2", layers::xavier(rng, f_in, gh));
      p.add(bp + ".gat" + hp + ".a", layers::xavier(rng, 2 * gh + 1, 1));
      for (int l = 0; l < 3; ++l)
        p.add(bp + ".gcn" + std::to_string(l + 1) + hp + ".w",
              layers::xavier(rng, widths[static_cast<size_t>(l)],
                             widths[static_cast<size_t>(l) + 1]));
    }
    for (int l = 0; l < 3; ++l) {
      const std::string gp = bp + ".gcn" + std::to_string(l + 1);
      const int w = widths[static_cast<size_t>(l) + 1];
      p.add(gp + ".fuse", layers::xavier(rng, hops * w, w));
      p.add(gp + ".bias", Matrix::Zero(1, w));
    }
    p.add(bp + ".res.w", layers::xavier(rng, gh, widths[3]));
    p.add(bp + ".bn.gamma", Matrix::Ones(1, widths[3]));
    p.add(bp + ".bn.beta", Matrix::Zero(1, widths[3]));
    p.add(bp + ".bn.run_mean", Matrix::Zero(1, widths[3]));
    p.add(bp + ".bn.run_var", Matrix::Ones(1, widths[3]));

    const std::string gp = bp + ".gru";
    p.add(gp + ".w_r", Matrix::Constant(1, 1, 0.5));
    p.add(gp + ".b_r", Matrix::Zero(1, 1));
    p.add(gp + ".w_z", Matrix::Constant(1, 1, 0.5));
    p.add(gp + ".b_z", Matrix::Zero(1, 1));
    p.add(gp + ".u_q", Matrix::Constant(1, 1, 0.5));
    p.add(gp + ".w_q", Matrix::Constant(1, 1, 0.5));
    p.add(gp + ".b_q", Matrix::Constant(1, 1, 0.25));
    p.add(gp + ".w_c", layers::xavier(rng, widths[3], hid));
    p.add(gp + ".u_c", layers::xavier(rng, hid, hid));
    p.add(gp + ".w_p", layers::xavier(rng, 2, hid));
  }
  p.add("b2.in.w", layers::xavier(rng, hid, cfg.input_feats));
  p.add("b2.in.b", Matrix::Zero(1, cfg.input_feats));
  p.add("head.w", layers::xavier(rng, hid, 2));
  p.add("head.b", Matrix::Zero(1, 2));
  return model;
}

std::pair<double, double> missing_rate_features(const Matrix& mask,
                                                const grid::KHopOperatorSet& ops,
                                                int node, int t) {
  if (t < 0 || t >= mask.rows() || node < 0 || node >= mask.cols())
    throw ValidationError("missing_rate_features: index out of range");
  double miss_before = 0.0;
  for (int s = 0; s < t; ++s)
    if (mask(s, node) == 0.0) miss_before += 1.0;
  const double l_r = miss_before / std::max(t, 1);

  const auto& nbrs = ops.hop_union[static_cast<size_t>(node)];
  double miss_nbr = 0.0;
  for (int j : nbrs)
    if (mask(t, j) == 0.0) miss_nbr += 1.0;
  const double l_z = miss_nbr / std::max<size_t>(nbrs.size(), 1);
  return {l_r, l_z};
}

GateValues gru_gates(const num::ParamStore& params, const std::string& prefix,
                     double l_r, double l_z) {
  const double w_r = params.value(prefix + ".w_r")(0, 0);
  const double b_r = params.value(prefix + ".b_r")(0, 0);
  const double w_z = params.value(prefix + ".w_z")(0, 0);
  const double b_z = params.value(prefix + ".b_z")(0, 0);
  const double u_q = params.value(prefix + ".u_q")(0, 0);
  const double w_q = params.value(prefix + ".w_q")(0, 0);
  const double b_q = params.value(prefix + ".b_q")(0, 0);
  GateValues g;
  g.r = std::exp(-std::max(0.0, w_r * l_r + b_r));
  g.z = std::exp(-std::max(0.0, w_z * l_z + b_z));
  g.q = 1.0 - std::exp(-std::max(0.0, u_q * l_r + w_q * l_z + b_q));
  return g;
}

namespace {

// Vectorized GRU-R step over all nodes at one time step. `prior_raw` is
// the N x 2 slice of the low-rank output; the embedding W_p is applied
// here so the backward pass can reach it.
Matrix gru_step_all(const num::ParamStore& params, const std::string& prefix,
                    const Matrix& spatial, const Matrix& h_prev,
                    const Matrix& prior_raw, const Vector& l_r,
                    const Vector& l_z, GruStepCache* cache) {
  const int n = static_cast<int>(spatial.rows());
  const double w_r = params.value(prefix + ".w_r")(0, 0);
  const double b_r = params.value(prefix + ".b_r")(0, 0);
  const double w_z = params.value(prefix + ".w_z")(0, 0);
  const double b_z = params.value(prefix + ".b_z")(0, 0);
  const double u_q = params.value(prefix + ".u_q")(0, 0);
  const double w_q = params.value(prefix + ".w_q")(0, 0);
  const double b_q = params.value(prefix + ".b_q")(0, 0);
  const Matrix& w_c = params.value(prefix + ".w_c");
  const Matrix& u_c = params.value(prefix + ".u_c");
  const Matrix& w_p = params.value(prefix + ".w_p");

  Vector e_r = (w_r * l_r.array() + b_r).matrix();
  Vector e_z = (w_z * l_z.array() + b_z).matrix();
  Vector e_q = (u_q * l_r.array() + w_q * l_z.array() + b_q).matrix();
  Vector r = (-e_r.array().max(0.0)).exp().matrix();
  Vector z = (-e_z.array().max(0.0)).exp().matrix();
  Vector q = (1.0 - (-e_q.array().max(0.0)).exp()).matrix();

  Matrix c_s = (spatial.array().colwise() * z.array()).matrix();
  Matrix c_t = (h_prev.array().colwise() * r.array()).matrix();
  Matrix h_hat = (c_s * w_c + c_t * u_c).array().tanh().matrix();
  Matrix p = prior_raw * w_p;
  Matrix h = ((p.array().colwise() * q.array()) +
              (h_hat.array().colwise() * (1.0 - q.array()))).matrix();

  if (cache != nullptr) {
    cache->l_r = l_r;
    cache->l_z = l_z;
    cache->e_r = e_r;
    cache->e_z = e_z;
    cache->e_q = e_q;
    cache->r = r;
    cache->z = z;
    cache->q = q;
    cache->spatial = spatial;
    cache->h_prev = h_prev;
    cache->c_s = c_s;
    cache->c_t = c_t;
    cache->h_hat = h_hat;
    cache->prior_raw = prior_raw;
    cache->p = p;
  }
  (void)n;
  return h;
}

// Returns d_spatial; writes d_h_prev for the BPTT chain.
Matrix gru_step_backward(num::ParamStore& params, const std::string& prefix,
                         const GruStepCache& c, const Matrix& d_h,
                         Matrix* d_h_prev) {
  const Matrix& w_c = params.value(prefix + ".w_c");
  const Matrix& u_c = params.value(prefix + ".u_c");

  const Vector dq = ((c.p - c.h_hat).cwiseProduct(d_h)).rowwise().sum();
  const Matrix d_p = (d_h.array().colwise() * c.q.array()).matrix();
  const Matrix d_hhat = (d_h.array().colwise() * (1.0 - c.q.array())).matrix();
  const Matrix d_pre =
      d_hhat.cwiseProduct((1.0 - c.h_hat.array().square()).matrix());

  params.grad(prefix + ".w_c") += c.c_s.transpose() * d_pre;
  params.grad(prefix + ".u_c") += c.c_t.transpose() * d_pre;
  const Matrix d_cs = d_pre * w_c.transpose();
  const Matrix d_ct = d_pre * u_c.transpose();

  const Vector dz = (c.spatial.cwiseProduct(d_cs)).rowwise().sum();
  const Matrix d_spatial = (d_cs.array().colwise() * c.z.array()).matrix();
  const Vector dr = (c.h_prev.cwiseProduct(d_ct)).rowwise().sum();
  *d_h_prev = (d_ct.array().colwise() * c.r.array()).matrix();

  const Vector de_r = (-c.r.array() * dr.array() *
                       (c.e_r.array() > 0.0).cast<double>())
                          .matrix();
  const Vector de_z = (-c.z.array() * dz.array() *
                       (c.e_z.array() > 0.0).cast<double>())
                          .matrix();
  const Vector de_q = ((1.0 - c.q.array()) * dq.array() *
                       (c.e_q.array() > 0.0).cast<double>())
                          .matrix();

  params.grad(prefix + ".w_r")(0, 0) += de_r.dot(c.l_r);
  params.grad(prefix + ".b_r")(0, 0) += de_r.sum();
  params.grad(prefix + ".w_z")(0, 0) += de_z.dot(c.l_z);
  params.grad(prefix + ".b_z")(0, 0) += de_z.sum();
  params.grad(prefix + ".u_q")(0, 0) += de_q.dot(c.l_r);
  params.grad(prefix + ".w_q")(0, 0) += de_q.dot(c.l_z);
  params.grad(prefix + ".b_q")(0, 0) += de_q.sum();
  params.grad(prefix + ".w_p") += c.prior_raw.transpose() * d_p;
  return d_spatial;
}

}  // namespace

Eigen::RowVectorXd gru_r_step(const num::ParamStore& params,
                              const std::string& prefix,
                              const Eigen::RowVectorXd& h_spatial,
                              const Eigen::RowVectorXd& h_prev,
                              const Eigen::RowVectorXd& prior_p, double l_r,
                              double l_z) {
  const GateValues g = gru_gates(params, prefix, l_r, l_z);
  const Matrix& w_c = params.value(prefix + ".w_c");
  const Matrix& u_c = params.value(prefix + ".u_c");
  const Eigen::RowVectorXd h_hat =
      ((g.z * h_spatial) * w_c + (g.r * h_prev) * u_c).array().tanh().matrix();
  return g.q * prior_p + (1.0 - g.q) * h_hat;
}

namespace {

struct BlockIo {
  std::vector<Matrix> h_seq;
};

BlockIo block_forward(STNetModel& model, int b, const grid::KHopOperatorSet& ops,
                      const grid::EdgeFeatureMatrix& edges,
                      const std::vector<Matrix>& in_feats, const Matrix& mask,
                      const std::array<Matrix, 2>* prior,
                      const ForwardOptions& opts, BlockCache* cache) {
  const std::string bp = blk(b);
  const int t_len = static_cast<int>(in_feats.size());
  const int n = static_cast<int>(mask.cols());
  const auto& cfg = model.cfg;
  auto& p = model.params;

  std::vector<Matrix> gat_out(static_cast<size_t>(t_len));
  std::vector<Matrix> res(static_cast<size_t>(t_len));
  if (cache != nullptr) {
    cache->in_feats = in_feats;
    cache->gat.resize(static_cast<size_t>(t_len));
    cache->gcn1.resize(static_cast<size_t>(t_len));
    cache->gcn2.resize(static_cast<size_t>(t_len));
    cache->gcn3.resize(static_cast<size_t>(t_len));
  }
  for (int t = 0; t < t_len; ++t) {
    const size_t ti = static_cast<size_t>(t);
    gat_out[ti] = layers::gat_forward(
        p, bp + ".gat", ops, in_feats[ti], &edges.values, cfg.leaky_slope,
        cache != nullptr ? &cache->gat[ti] : nullptr);
    const Matrix g1 = layers::pek_forward(p, bp + ".gcn1", ops, gat_out[ti],
                                          cache != nullptr ? &cache->gcn1[ti] : nullptr);
    const Matrix g2 = layers::pek_forward(p, bp + ".gcn2", ops, g1,
                                          cache != nullptr ? &cache->gcn2[ti] : nullptr);
    const Matrix g3 = layers::pek_forward(p, bp + ".gcn3", ops, g2,
                                          cache != nullptr ? &cache->gcn3[ti] : nullptr);
    res[ti] = (1.0 - cfg.residual_alpha) * g3 +
              cfg.residual_alpha * (gat_out[ti] * p.value(bp + ".res.w"));
    check_finite(res[ti], bp + ".gcn");
  }
  if (cache != nullptr) cache->gat_out = gat_out;

  // batch norm over all (t, node) samples of this window
  const int width = static_cast<int>(res[0].cols());
  Matrix stacked(static_cast<Eigen::Index>(t_len) * n, width);
  for (int t = 0; t < t_len; ++t)
    stacked.middleRows(static_cast<Eigen::Index>(t) * n, n) = res[static_cast<size_t>(t)];
  const Matrix bn_stacked = layers::batchnorm_forward(
      p, bp + ".bn", stacked, opts.training, opts.training && opts.update_stats,
      cfg.bn_momentum, cfg.bn_eps, cache != nullptr ? &cache->bn : nullptr);
  check_finite(bn_stacked, bp + ".bn");

  std::vector<Matrix> bn_out(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t)
    bn_out[static_cast<size_t>(t)] =
        bn_stacked.middleRows(static_cast<Eigen::Index>(t) * n, n);
  if (cache != nullptr) cache->bn_out = bn_out;

  BlockIo io;
  io.h_seq.resize(static_cast<size_t>(t_len));
  if (cache != nullptr) cache->gru.resize(static_cast<size_t>(t_len));
  Matrix h_prev = Matrix::Zero(n, cfg.gru_hidden);
  for (int t = 0; t < t_len; ++t) {
    const size_t ti = static_cast<size_t>(t);
    Vector l_r(n), l_z(n);
    for (int i = 0; i < n; ++i) {
      const auto [lr, lz] = missing_rate_features(mask, ops, i, t);
      l_r(i) = lr;
      l_z(i) = lz;
    }
    Matrix prior_raw = Matrix::Zero(n, 2);
    if (prior != nullptr) {
      prior_raw.col(0) = (*prior)[0].row(t).transpose();
      prior_raw.col(1) = (*prior)[1].row(t).transpose();
    }
    io.h_seq[ti] = gru_step_all(p, bp + ".gru", bn_out[ti], h_prev, prior_raw,
                                l_r, l_z, cache != nullptr ? &cache->gru[ti] : nullptr);
    h_prev = io.h_seq[ti];
  }
  check_finite(io.h_seq.back(), bp + ".gru");
  if (cache != nullptr) cache->h_seq = io.h_seq;
  return io;
}

// Incoming d_h_seq per step; returns d w.r.t. the block input features.
std::vector<Matrix> block_backward(STNetModel& model, int b,
                                   const grid::KHopOperatorSet& ops,
                                   const grid::EdgeFeatureMatrix& edges,
                                   const BlockCache& cache,
                                   std::vector<Matrix> d_h_seq) {
  const std::string bp = blk(b);
  const int t_len = static_cast<int>(cache.h_seq.size());
  const int n = static_cast<int>(cache.h_seq[0].rows());
  const auto& cfg = model.cfg;
  auto& p = model.params;

  std::vector<Matrix> d_bn(static_cast<size_t>(t_len));
  Matrix d_next;  // empty until first use
  for (int t = t_len - 1; t >= 0; --t) {
    const size_t ti = static_cast<size_t>(t);
    Matrix d_h = d_h_seq[ti];
    if (d_next.size() != 0) d_h += d_next;
    Matrix d_prev;
    d_bn[ti] = gru_step_backward(p, bp + ".gru", cache.gru[ti], d_h, &d_prev);
    d_next = d_prev;
  }

  const int width = static_cast<int>(d_bn[0].cols());
  Matrix d_bn_stacked(static_cast<Eigen::Index>(t_len) * n, width);
  for (int t = 0; t < t_len; ++t)
    d_bn_stacked.middleRows(static_cast<Eigen::Index>(t) * n, n) =
        d_bn[static_cast<size_t>(t)];
  const Matrix d_res_stacked =
      layers::batchnorm_backward(p, bp + ".bn", cache.bn, d_bn_stacked);

  std::vector<Matrix> d_in(static_cast<size_t>(t_len));
  const Matrix& w_res = p.value(bp + ".res.w");
  for (int t = 0; t < t_len; ++t) {
    const size_t ti = static_cast<size_t>(t);
    const Matrix d_res = d_res_stacked.middleRows(static_cast<Eigen::Index>(t) * n, n);
    const Matrix d_g3 = (1.0 - cfg.residual_alpha) * d_res;
    p.grad(bp + ".res.w") +=
        cfg.residual_alpha * cache.gat_out[ti].transpose() * d_res;
    Matrix d_gat = cfg.residual_alpha * d_res * w_res.transpose();
    Matrix d = layers::pek_backward(p, bp + ".gcn3", ops, cache.gcn3[ti], d_g3);
    d = layers::pek_backward(p, bp + ".gcn2", ops, cache.gcn2[ti], d);
    d_gat += layers::pek_backward(p, bp + ".gcn1", ops, cache.gcn1[ti], d);
    d_in[ti] = layers::gat_backward(p, bp + ".gat", ops, cache.gat[ti], d_gat,
                                    &edges.values, cfg.leaky_slope);
  }
  return d_in;
}

}  // namespace

std::array<Matrix, 2> forward(STNetModel& model,
                              const grid::KHopOperatorSet& ops,
                              const grid::EdgeFeatureMatrix& edges,
                              const datagen::MeasurementWindow& w,
                              const std::array<Matrix, 2>* prior,
                              const ForwardOptions& opts, ForwardCache* cache) {
  const int t_len = w.steps();
  const int n = w.nodes();
  if (n != ops.pmu_count())
    throw ValidationError("stnet: window node count does not match operators");
  if (prior != nullptr &&
      ((*prior)[0].rows() != t_len || (*prior)[0].cols() != n))
    throw ValidationError("stnet: prior shape mismatch");

  std::vector<Matrix> in1(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    Matrix f(n, model.cfg.input_feats);
    f.col(0) = w.x_obs[0].row(t).transpose();
    f.col(1) = w.mask.row(t).transpose();
    f.col(2) = w.x_obs[1].row(t).transpose();
    f.col(3) = w.mask.row(t).transpose();
    in1[static_cast<size_t>(t)] = f;
  }

  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  const BlockIo b1 = block_forward(model, 0, ops, edges, in1, w.mask, prior,
                                   opts, &c.blocks[0]);

  std::vector<Matrix> in2(static_cast<size_t>(t_len));
  const Matrix& w_in = model.params.value("b2.in.w");
  const Matrix& b_in = model.params.value("b2.in.b");
  for (int t = 0; t < t_len; ++t) {
    in2[static_cast<size_t>(t)] = b1.h_seq[static_cast<size_t>(t)] * w_in;
    in2[static_cast<size_t>(t)].rowwise() += b_in.row(0);
  }
  const BlockIo b2 = block_forward(model, 1, ops, edges, in2, w.mask, prior,
                                   opts, &c.blocks[1]);

  const Matrix& w_head = model.params.value("head.w");
  const Matrix& b_head = model.params.value("head.b");
  std::array<Matrix, 2> out{Matrix(t_len, n), Matrix(t_len, n)};
  for (int t = 0; t < t_len; ++t) {
    Matrix o = b2.h_seq[static_cast<size_t>(t)] * w_head;
    o.rowwise() += b_head.row(0);
    out[0].row(t) = o.col(0).transpose();
    out[1].row(t) = o.col(1).transpose();
  }
  check_finite(out[0], "head");
  check_finite(out[1], "head");
  return out;
}

void backward(STNetModel& model, const grid::KHopOperatorSet& ops,
              const grid::EdgeFeatureMatrix& edges, const ForwardCache& cache,
              const std::array<Matrix, 2>& d_out) {
  auto& p = model.params;
  const auto& h2_seq = cache.blocks[1].h_seq;
  const int t_len = static_cast<int>(h2_seq.size());
  const int n = static_cast<int>(h2_seq[0].rows());

  const Matrix& w_head = p.value("head.w");
  std::vector<Matrix> d_h2(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    Matrix d_o(n, 2);
    d_o.col(0) = d_out[0].row(t).transpose();
    d_o.col(1) = d_out[1].row(t).transpose();
    p.grad("head.w") += h2_seq[static_cast<size_t>(t)].transpose() * d_o;
    p.grad("head.b").row(0) += d_o.colwise().sum();
    d_h2[static_cast<size_t>(t)] = d_o * w_head.transpose();
  }

  const std::vector<Matrix> d_in2 =
      block_backward(model, 1, ops, edges, cache.blocks[1], std::move(d_h2));

  const Matrix& w_in = p.value("b2.in.w");
  const auto& h1_seq = cache.blocks[0].h_seq;
  std::vector<Matrix> d_h1(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    const size_t ti = static_cast<size_t>(t);
    p.grad("b2.in.w") += h1_seq[ti].transpose() * d_in2[ti];
    p.grad("b2.in.b").row(0) += d_in2[ti].colwise().sum();
    d_h1[ti] = d_in2[ti] * w_in.transpose();
  }
  block_backward(model, 0, ops, edges, cache.blocks[0], std::move(d_h1));
}

WindowLoss window_loss_grad(STNetModel& model, const grid::KHopOperatorSet& ops,
                            const grid::EdgeFeatureMatrix& edges,
                            const datagen::MeasurementWindow& w,
                            const std::array<Matrix, 2>* prior,
                            const std::array<Matrix, 2>& target, double scale,
                            const ForwardOptions& opts) {
  ForwardCache cache;
  const auto x_tilde = forward(model, ops, edges, w, prior, opts, &cache);

  const double n_miss = 2.0 * (w.mask.array() == 0.0).count();
  const double n_obs = 2.0 * w.mask.sum();
  WindowLoss loss;
  std::array<Matrix, 2> d_out;
  for (int ch = 0; ch < 2; ++ch) {
    const size_t ci = static_cast<size_t>(ch);
    const Matrix diff = x_tilde[ci] - target[ci];
    const Matrix miss_diff = (1.0 - w.mask.array()).matrix().cwiseProduct(diff);
    const Matrix obs_diff = w.mask.cwiseProduct(diff);
    d_out[ci] = Matrix::Zero(diff.rows(), diff.cols());
    if (n_miss > 0.0) {
      loss.missing_term += miss_diff.squaredNorm() / n_miss;
      d_out[ci] += (2.0 / n_miss) * miss_diff;
    }
    if (n_obs > 0.0) {
      loss.anchor_term +=
          model.cfg.anchor_weight * obs_diff.squaredNorm() / n_obs;
      d_out[ci] += model.cfg.anchor_weight * (2.0 / n_obs) * obs_diff;
    }
    d_out[ci] *= scale;
  }
  loss.total = loss.missing_term + loss.anchor_term;
  backward(model, ops, edges, cache, d_out);
  return loss;
}

WindowLoss train_batch(STNetModel& model, const grid::KHopOperatorSet& ops,
                       const grid::EdgeFeatureMatrix& edges,
                       const std::vector<const datagen::MeasurementWindow*>& batch,
                       const std::vector<const std::array<Matrix, 2>*>& priors,
                       const std::vector<const std::array<Matrix, 2>*>& targets,
                       const num::AdamConfig& adam) {
  if (batch.empty()) throw ValidationError("stnet: empty batch");
  if (priors.size() != batch.size() || targets.size() != batch.size())
    throw ValidationError("stnet: batch/prior/target size mismatch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  WindowLoss mean;
  ForwardOptions opts;
  opts.training = true;
  for (size_t i = 0; i < batch.size(); ++i) {
    const WindowLoss wl = window_loss_grad(model, ops, edges, *batch[i],
                                           priors[i], *targets[i], scale, opts);
    mean.total += scale * wl.total;
    mean.missing_term += scale * wl.missing_term;
    mean.anchor_term += scale * wl.anchor_term;
  }
  if (!std::isfinite(mean.total))
    throw ComputeError("stnet: training diverged (non-finite loss)");
  num::adam_step(model.params, adam);
  if (!model.params.all_finite())
    throw ComputeError("stnet: non-finite parameters after update");
  return mean;
}

std::vector<TrainRecord> train(STNetModel& model,
                               const std::vector<datagen::MeasurementWindow>& windows,
                               const std::vector<std::array<Matrix, 2>>* priors,
                               const grid::KHopOperatorSet& ops,
                               const grid::EdgeFeatureMatrix& edges,
                               uint64_t seed, std::ostream* log) {
  if (windows.empty()) throw ValidationError("stnet: no training windows");
  if (priors != nullptr && priors->size() != windows.size())
    throw ValidationError("stnet: priors do not align with windows");
  num::AdamConfig adam;
  adam.lr = model.cfg.lr;
  Rng rng(seed);

  std::vector<size_t> order(windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<TrainRecord> records;
  if (log != nullptr) *log << "step,missing_term,anchor_term,total\n";
  long step = 0;
  const int batch_size =
      std::min<int>(model.cfg.batch_size, static_cast<int>(windows.size()));
  for (int epoch = 0; epoch < model.cfg.epochs; ++epoch) {
    Rng shuffle = rng.fork(200 + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int>(i) - 1))]);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      std::vector<const datagen::MeasurementWindow*> batch;
      std::vector<const std::array<Matrix, 2>*> bpriors, btargets;
      for (size_t b = start; b < std::min(order.size(), start + static_cast<size_t>(batch_size)); ++b) {
        const size_t idx = order[b];
        batch.push_back(&windows[idx]);
        bpriors.push_back(priors != nullptr ? &(*priors)[idx] : nullptr);
        btargets.push_back(&windows[idx].x_true);
      }
      const WindowLoss wl = train_batch(model, ops, edges, batch, bpriors, btargets, adam);
      ++step;
      records.push_back({step, wl.missing_term, wl.anchor_term, wl.total});
      if (log != nullptr)
        *log << step << ',' << wl.missing_term << ',' << wl.anchor_term << ','
             << wl.total << "\n";
    }
  }
  return records;
}

}  // namespace pmurec::stnet
