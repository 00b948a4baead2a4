// SPDX-License-Identifier: Apache-2.0
#include "pmurec/layers.hpp"

#include <cmath>

namespace pmurec::layers {

Matrix xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

namespace {

Matrix row_softmax(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

double leaky(double x, double slope) { return x >= 0.0 ? x : slope * x; }
double leaky_grad(double x, double slope) { return x >= 0.0 ? 1.0 : slope; }

}  // namespace

Matrix attention_forward(const num::ParamStore& params, const std::string& prefix,
                         const Matrix& x, bool training, double dropout,
                         Rng* drop_rng, AttentionCache* cache) {
  const Matrix& wq = params.value(prefix + ".wq");
  const Matrix& wk = params.value(prefix + ".wk");
  const Matrix& wv = params.value(prefix + ".wv");
  const Matrix& wo = params.value(prefix + ".wo");
  if (x.cols() != wq.rows())
    throw ValidationError("attention: input width " + std::to_string(x.cols()) +
                          " does not match parameters");

  const Matrix q = x * wq;
  const Matrix k = x * wk;
  const Matrix v = x * wv;
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  const Matrix scores = q * k.transpose() * scale;
  const Matrix probs = row_softmax(scores);

  Matrix probs_used = probs;
  Matrix keep;
  if (training && dropout > 0.0) {
    if (drop_rng == nullptr)
      throw ValidationError("attention: training-mode dropout needs an rng");
    keep.resize(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
      for (Eigen::Index c = 0; c < probs.cols(); ++c)
        keep(r, c) = drop_rng->uniform() >= dropout ? 1.0 : 0.0;
    probs_used = probs.cwiseProduct(keep) / (1.0 - dropout);
  }

  const Matrix ctx = probs_used * v;
  Matrix out = ctx * wo;
  if (cache != nullptr) {
    cache->x = x;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->probs = probs;
    cache->probs_used = probs_used;
    cache->drop_keep = keep;
    cache->ctx = ctx;
    cache->training = training && dropout > 0.0;
    cache->dropout = dropout;
  }
  return out;
}

Matrix attention_backward(num::ParamStore& params, const std::string& prefix,
                          const AttentionCache& cache, const Matrix& d_out) {
  const Matrix& wq = params.value(prefix + ".wq");
  const Matrix& wk = params.value(prefix + ".wk");
  const Matrix& wv = params.value(prefix + ".wv");
  const Matrix& wo = params.value(prefix + ".wo");

  params.grad(prefix + ".wo") += cache.ctx.transpose() * d_out;
  const Matrix d_ctx = d_out * wo.transpose();

  Matrix d_probs = d_ctx * cache.v.transpose();
  params.grad(prefix + ".wv") +=
      cache.x.transpose() * (cache.probs_used.transpose() * d_ctx);
  Matrix d_v = cache.probs_used.transpose() * d_ctx;

  if (cache.training)
    d_probs = d_probs.cwiseProduct(cache.drop_keep) / (1.0 - cache.dropout);

  // softmax rows: dS = P .* (dP - rowsum(dP .* P))
  Matrix d_scores(d_probs.rows(), d_probs.cols());
  for (Eigen::Index r = 0; r < d_probs.rows(); ++r) {
    const double dot = d_probs.row(r).dot(cache.probs.row(r));
    d_scores.row(r) = (cache.probs.row(r).array() *
                       (d_probs.row(r).array() - dot)).matrix();
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  const Matrix d_q = d_scores * cache.k * scale;
  const Matrix d_k = d_scores.transpose() * cache.q * scale;

  params.grad(prefix + ".wq") += cache.x.transpose() * d_q;
  params.grad(prefix + ".wk") += cache.x.transpose() * d_k;
  // wv grad was accumulated above from d_v's definition; d_v flows to x too
  Matrix d_x = d_q * wq.transpose() + d_k * wk.transpose() + d_v * wv.transpose();
  return d_x;
}

Matrix gat_forward(const num::ParamStore& params, const std::string& prefix,
                   const grid::KHopOperatorSet& ops, const Matrix& h,
                   const Matrix* edge_features, double leaky_slope,
                   GatCache* cache) {
  const int np = static_cast<int>(h.rows());
  if (np != ops.pmu_count())
    throw ValidationError("gat: node count does not match operator set");
  const int hops = ops.max_hops;

  Matrix mean_out;
  if (cache != nullptr) {
    cache->input = h;
    cache->hops.assign(static_cast<size_t>(hops), GatHopCache{});
  }

  for (int k = 1; k <= hops; ++k) {
    const std::string hp = prefix + ".h" + std::to_string(k);
    const Matrix& w1 = params.value(hp + ".w1");
    const Matrix& w2 = params.value(hp + ".w2");
    const Matrix& a = params.value(hp + ".a");
    const int fp = static_cast<int>(w1.cols());
    const bool with_edges = a.rows() == 2 * fp + 1;
    if (!with_edges && a.rows() != 2 * fp)
      throw ValidationError("gat: attention vector size mismatch");
    if (with_edges && edge_features == nullptr)
      throw ValidationError("gat: parameters expect edge features");

    const Matrix g1 = h * w1;
    const Matrix g2 = h * w2;
    const Vector a_src = a.col(0).head(fp);
    const Vector a_dst = a.col(0).segment(fp, fp);
    const double a_e = with_edges ? a(2 * fp, 0) : 0.0;

    GatHopCache hop;
    hop.g1 = g1;
    hop.g2 = g2;
    hop.score.resize(static_cast<size_t>(np));
    hop.alpha.resize(static_cast<size_t>(np));
    hop.agg = Matrix::Zero(np, fp);

    for (int i = 0; i < np; ++i) {
      const auto& nbrs = ops.neighbors_at(k, i);
      if (nbrs.empty()) {
        hop.agg.row(i) = g1.row(i);  // self-only attention
        continue;
      }
      auto& scores = hop.score[static_cast<size_t>(i)];
      scores.resize(nbrs.size());
      const double si = g1.row(i).dot(a_src);
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t n = 0; n < nbrs.size(); ++n) {
        double s = si + g2.row(nbrs[n]).dot(a_dst);
        if (with_edges) s += a_e * (*edge_features)(i, nbrs[n]);
        scores[n] = s;
        mx = std::max(mx, leaky(s, leaky_slope));
      }
      auto& alpha = hop.alpha[static_cast<size_t>(i)];
      alpha.resize(nbrs.size());
      double z = 0.0;
      for (size_t n = 0; n < nbrs.size(); ++n) {
        alpha[n] = std::exp(leaky(scores[n], leaky_slope) - mx);
        z += alpha[n];
      }
      for (size_t n = 0; n < nbrs.size(); ++n) {
        alpha[n] /= z;
        hop.agg.row(i) += alpha[n] * g1.row(nbrs[n]);
      }
    }

    const Matrix hop_out = hop.agg.cwiseMax(0.0);
    if (mean_out.size() == 0)
      mean_out = hop_out;
    else
      mean_out += hop_out;
    if (cache != nullptr) cache->hops[static_cast<size_t>(k - 1)] = std::move(hop);
  }
  mean_out /= static_cast<double>(hops);
  return mean_out;
}

Matrix gat_backward(num::ParamStore& params, const std::string& prefix,
                    const grid::KHopOperatorSet& ops, const GatCache& cache,
                    const Matrix& d_out, const Matrix* edge_features,
                    double leaky_slope) {
  const Matrix& h = cache.input;
  const int np = static_cast<int>(h.rows());
  const int hops = ops.max_hops;
  Matrix d_h = Matrix::Zero(h.rows(), h.cols());

  for (int k = 1; k <= hops; ++k) {
    const std::string hp = prefix + ".h" + std::to_string(k);
    const Matrix& w1 = params.value(hp + ".w1");
    const Matrix& w2 = params.value(hp + ".w2");
    const Matrix& a = params.value(hp + ".a");
    const int fp = static_cast<int>(w1.cols());
    const bool with_edges = a.rows() == 2 * fp + 1;
    const Vector a_src = a.col(0).head(fp);
    const Vector a_dst = a.col(0).segment(fp, fp);
    const auto& hop = cache.hops[static_cast<size_t>(k - 1)];

    // d through mean and ReLU
    Matrix d_agg = (d_out / static_cast<double>(hops))
                       .cwiseProduct((hop.agg.array() > 0.0).cast<double>().matrix());

    Matrix d_g1 = Matrix::Zero(np, fp);
    Matrix d_g2 = Matrix::Zero(np, fp);
    Vector d_a_src = Vector::Zero(fp);
    Vector d_a_dst = Vector::Zero(fp);
    double d_a_e = 0.0;

    for (int i = 0; i < np; ++i) {
      const auto& nbrs = ops.neighbors_at(k, i);
      if (nbrs.empty()) {
        d_g1.row(i) += d_agg.row(i);
        continue;
      }
      const auto& alpha = hop.alpha[static_cast<size_t>(i)];
      const auto& scores = hop.score[static_cast<size_t>(i)];
      std::vector<double> d_alpha(nbrs.size());
      double dot = 0.0;
      for (size_t n = 0; n < nbrs.size(); ++n) {
        d_alpha[n] = d_agg.row(i).dot(hop.g1.row(nbrs[n]));
        d_g1.row(nbrs[n]) += alpha[n] * d_agg.row(i);
        dot += d_alpha[n] * alpha[n];
      }
      for (size_t n = 0; n < nbrs.size(); ++n) {
        const double d_l = alpha[n] * (d_alpha[n] - dot);
        const double d_s = d_l * leaky_grad(scores[n], leaky_slope);
        d_g1.row(i) += d_s * a_src.transpose();
        d_g2.row(nbrs[n]) += d_s * a_dst.transpose();
        d_a_src += d_s * hop.g1.row(i).transpose();
        d_a_dst += d_s * hop.g2.row(nbrs[n]).transpose();
        if (with_edges) d_a_e += d_s * (*edge_features)(i, nbrs[n]);
      }
    }

    params.grad(hp + ".w1") += h.transpose() * d_g1;
    params.grad(hp + ".w2") += h.transpose() * d_g2;
    Matrix& ga = params.grad(hp + ".a");
    ga.col(0).head(fp) += d_a_src;
    ga.col(0).segment(fp, fp) += d_a_dst;
    if (with_edges) ga(2 * fp, 0) += d_a_e;
    d_h += d_g1 * w1.transpose() + d_g2 * w2.transpose();
  }
  return d_h;
}

Matrix pek_forward(const num::ParamStore& params, const std::string& prefix,
                   const grid::KHopOperatorSet& ops, const Matrix& h,
                   PekCache* cache) {
  if (h.rows() != ops.pmu_count())
    throw ValidationError("pek: node count does not match operator set");
  const int hops = ops.max_hops;
  const Matrix& fuse = params.value(prefix + ".fuse");
  const Matrix& bias = params.value(prefix + ".bias");
  const int fp = static_cast<int>(fuse.cols());

  Matrix concat(h.rows(), static_cast<Eigen::Index>(hops) * fp);
  if (cache != nullptr) {
    cache->input = h;
    cache->smoothed.clear();
    cache->pre.clear();
  }
  for (int k = 1; k <= hops; ++k) {
    const Matrix& w = params.value(prefix + ".h" + std::to_string(k) + ".w");
    const Matrix sh = ops.diffusion[static_cast<size_t>(k - 1)] * h;
    const Matrix pre = sh * w;
    concat.middleCols(static_cast<Eigen::Index>(k - 1) * fp, fp) = pre.cwiseMax(0.0);
    if (cache != nullptr) {
      cache->smoothed.push_back(sh);
      cache->pre.push_back(pre);
    }
  }
  if (cache != nullptr) cache->concat = concat;
  Matrix out = concat * fuse;
  out.rowwise() += bias.row(0);
  return out;
}

Matrix pek_backward(num::ParamStore& params, const std::string& prefix,
                    const grid::KHopOperatorSet& ops, const PekCache& cache,
                    const Matrix& d_out) {
  const int hops = ops.max_hops;
  const Matrix& fuse = params.value(prefix + ".fuse");
  const int fp = static_cast<int>(fuse.cols());

  params.grad(prefix + ".fuse") += cache.concat.transpose() * d_out;
  params.grad(prefix + ".bias").row(0) += d_out.colwise().sum();
  const Matrix d_concat = d_out * fuse.transpose();

  Matrix d_h = Matrix::Zero(cache.input.rows(), cache.input.cols());
  for (int k = 1; k <= hops; ++k) {
    const Matrix& w = params.value(prefix + ".h" + std::to_string(k) + ".w");
    const Matrix d_branch =
        d_concat.middleCols(static_cast<Eigen::Index>(k - 1) * fp, fp);
    const Matrix d_pre = d_branch.cwiseProduct(
        (cache.pre[static_cast<size_t>(k - 1)].array() > 0.0).cast<double>().matrix());
    params.grad(prefix + ".h" + std::to_string(k) + ".w") +=
        cache.smoothed[static_cast<size_t>(k - 1)].transpose() * d_pre;
    // S_k is symmetric
    d_h += ops.diffusion[static_cast<size_t>(k - 1)] * (d_pre * w.transpose());
  }
  return d_h;
}

Matrix batchnorm_forward(num::ParamStore& params, const std::string& prefix,
                         const Matrix& x, bool training, bool update_stats,
                         double momentum, double eps, BatchNormCache* cache) {
  const Matrix& gamma = params.value(prefix + ".gamma");
  const Matrix& beta = params.value(prefix + ".beta");
  const double m = static_cast<double>(x.rows());

  Eigen::RowVectorXd mean, var;
  if (training) {
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().sum() / m;
    if (update_stats) {
      Matrix& rm = params.value(prefix + ".run_mean");
      Matrix& rv = params.value(prefix + ".run_var");
      rm.row(0) = momentum * rm.row(0) + (1.0 - momentum) * mean;
      rv.row(0) = momentum * rv.row(0) + (1.0 - momentum) * var;
    }
  } else {
    mean = params.value(prefix + ".run_mean").row(0);
    var = params.value(prefix + ".run_var").row(0);
  }

  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix x_hat = ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Matrix out = (x_hat.array().rowwise() * gamma.row(0).array()).matrix();
  out.rowwise() += beta.row(0);
  if (cache != nullptr) {
    cache->x = x;
    cache->x_hat = x_hat;
    cache->mean = mean;
    cache->var = var;
    cache->eps = eps;
  }
  return out;
}

Matrix batchnorm_backward(num::ParamStore& params, const std::string& prefix,
                          const BatchNormCache& cache, const Matrix& d_out) {
  const Matrix& gamma = params.value(prefix + ".gamma");
  const double m = static_cast<double>(cache.x.rows());
  const Eigen::RowVectorXd inv_std = (cache.var.array() + cache.eps).rsqrt();

  params.grad(prefix + ".beta").row(0) += d_out.colwise().sum();
  params.grad(prefix + ".gamma").row(0) +=
      d_out.cwiseProduct(cache.x_hat).colwise().sum();

  const Matrix d_xhat = (d_out.array().rowwise() * gamma.row(0).array()).matrix();
  const Eigen::RowVectorXd sum_dxhat = d_xhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat =
      d_xhat.cwiseProduct(cache.x_hat).colwise().sum();

  // dX = inv_std/m * (m*dXhat - sum(dXhat) - Xhat * sum(dXhat .* Xhat))
  Matrix d_x = m * d_xhat;
  d_x.rowwise() -= sum_dxhat;
  d_x -= (cache.x_hat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  d_x = (d_x.array().rowwise() * (inv_std.array() / m)).matrix();
  return d_x;
}

}  // namespace pmurec::layers
