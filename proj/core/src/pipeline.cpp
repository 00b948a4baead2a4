// SPDX-License-Identifier: Apache-2.0
#include "pmurec/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pmurec/numeric.hpp"

namespace pmurec::pipeline {

using nlohmann::json;

std::array<Matrix, 2> compose_reconstruction(const std::array<Matrix, 2>& x_obs,
                                             const Matrix& mask,
                                             const std::array<Matrix, 2>& x_tilde) {
  std::array<Matrix, 2> out;
  for (int ch = 0; ch < 2; ++ch) {
    const size_t ci = static_cast<size_t>(ch);
    if (x_obs[ci].rows() != mask.rows() || x_obs[ci].cols() != mask.cols() ||
        x_tilde[ci].rows() != mask.rows() || x_tilde[ci].cols() != mask.cols())
      throw ValidationError("compose: shape mismatch");
    out[ci] = x_obs[ci];  // bit-exact passthrough at observed entries
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        if (mask(r, c) == 0.0) out[ci](r, c) = x_tilde[ci](r, c);
  }
  return out;
}

namespace {
constexpr double kMspeGuard = 1e-3;
}

void MetricAccumulator::add(const datagen::MeasurementWindow& w,
                            const std::array<Matrix, 2>& x_prime) {
  for (int ch = 0; ch < 2; ++ch) {
    const size_t ci = static_cast<size_t>(ch);
    for (Eigen::Index t = 0; t < w.mask.rows(); ++t)
      for (Eigen::Index a = 0; a < w.mask.cols(); ++a) {
        if (w.mask(t, a) != 0.0) continue;
        const double truth = w.x_true[ci](t, a);
        const double err = x_prime[ci](t, a) - truth;
        const auto label = static_cast<datagen::MissPattern>(w.labels(t, a));
        auto apply = [&](Bucket& b) {
          b.count += 1;
          b.se_sum += err * err;
          if (std::abs(truth) > kMspeGuard) {
            const double rel = err / truth;
            b.spe_sum += rel * rel;
            b.spe_count += 1;
          } else {
            b.spe_excluded += 1;
          }
        };
        apply(total_);
        apply(per_pattern_[datagen::pattern_name(label)]);
      }
  }
}

ReconstructionReport MetricAccumulator::finish(const std::string& method,
                                               const std::string& variant,
                                               uint64_t seed) const {
  ReconstructionReport rep;
  rep.method = method;
  rep.variant = variant;
  rep.seed = seed;
  rep.n_missing = total_.count;
  if (total_.count == 0) {
    rep.empty = true;
    return rep;
  }
  rep.rmse = std::sqrt(total_.se_sum / static_cast<double>(total_.count));
  rep.mspe = total_.spe_count > 0
                 ? 100.0 * total_.spe_sum / static_cast<double>(total_.spe_count)
                 : 0.0;
  rep.mspe_excluded = total_.spe_excluded;
  for (const auto& [name, b] : per_pattern_) {
    PatternMetrics pm;
    pm.count = b.count;
    pm.rmse = std::sqrt(b.se_sum / static_cast<double>(b.count));
    pm.mspe = b.spe_count > 0
                  ? 100.0 * b.spe_sum / static_cast<double>(b.spe_count)
                  : 0.0;
    pm.mspe_excluded = b.spe_excluded;
    rep.per_pattern[name] = pm;
  }
  return rep;
}

Matrix svt_complete(const Matrix& x_obs, const Matrix& mask,
                    const SvtConfig& cfg, bool* converged) {
  if (x_obs.rows() != mask.rows() || x_obs.cols() != mask.cols())
    throw ValidationError("svt: shape mismatch");
  Matrix z = mask.cwiseProduct(x_obs);
  double tau = -1.0;
  bool done = false;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto dec = num::svd(z);
    if (tau < 0.0) tau = cfg.tau_rel * (dec.s.size() > 0 ? dec.s(0) : 0.0);
    Vector s = dec.s;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (cfg.soft)
        s(i) = std::max(s(i) - tau, 0.0);
      else if (s(i) <= tau)
        s(i) = 0.0;
    }
    const Matrix y = dec.u * s.asDiagonal() * dec.v.transpose();
    Matrix z_next = mask.cwiseProduct(x_obs) +
                    (1.0 - mask.array()).matrix().cwiseProduct(y);
    const double change = (z_next - z).norm();
    z = std::move(z_next);
    if (change < cfg.tol) {
      done = true;
      break;
    }
  }
  if (converged != nullptr) *converged = done;
  return z;
}

Matrix linear_interp_time(const Matrix& x_obs, const Matrix& mask) {
  const Eigen::Index t_len = x_obs.rows();
  Matrix out = x_obs;

  double obs_sum = 0.0;
  long obs_count = 0;
  for (Eigen::Index t = 0; t < t_len; ++t)
    for (Eigen::Index a = 0; a < x_obs.cols(); ++a)
      if (mask(t, a) != 0.0) {
        obs_sum += x_obs(t, a);
        ++obs_count;
      }
  const double fallback = obs_count > 0 ? obs_sum / static_cast<double>(obs_count) : 0.0;

  for (Eigen::Index a = 0; a < x_obs.cols(); ++a) {
    std::vector<Eigen::Index> obs;
    for (Eigen::Index t = 0; t < t_len; ++t)
      if (mask(t, a) != 0.0) obs.push_back(t);
    if (obs.empty()) {
      out.col(a).setConstant(fallback);
      continue;
    }
    for (Eigen::Index t = 0; t < t_len; ++t) {
      if (mask(t, a) != 0.0) continue;
      auto hi = std::lower_bound(obs.begin(), obs.end(), t);
      if (hi == obs.begin()) {
        out(t, a) = x_obs(obs.front(), a);  // extrapolate with nearest
      } else if (hi == obs.end()) {
        out(t, a) = x_obs(obs.back(), a);
      } else {
        const Eigen::Index t1 = *hi;
        const Eigen::Index t0 = *(hi - 1);
        const double w = static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
        out(t, a) = (1.0 - w) * x_obs(t0, a) + w * x_obs(t1, a);
      }
    }
  }
  return out;
}

std::array<Matrix, 2> baseline_reconstruct(const datagen::MeasurementWindow& w,
                                           const std::string& method,
                                           const SvtConfig& cfg,
                                           long* nonconverged) {
  std::array<Matrix, 2> out;
  if (method == "svt") {
    for (int ch = 0; ch < 2; ++ch) {
      bool converged = false;
      out[static_cast<size_t>(ch)] =
          svt_complete(w.x_obs[static_cast<size_t>(ch)], w.mask, cfg, &converged);
      if (!converged && nonconverged != nullptr) ++*nonconverged;
    }
  } else if (method == "linear_interp") {
    for (int ch = 0; ch < 2; ++ch)
      out[static_cast<size_t>(ch)] =
          linear_interp_time(w.x_obs[static_cast<size_t>(ch)], w.mask);
  } else {
    throw ValidationError("baseline: unknown method '" + method + "'");
  }
  return out;
}

namespace {

const std::array<std::string, 4> kPatterns{"random", "single_node", "multi_node",
                                           "block_wise"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_reports_csv(const std::filesystem::path& file,
                       const std::vector<ReconstructionReport>& reports) {
  std::ofstream out(file);
  if (!out) throw ComputeError("reports: cannot write " + file.string());
  out << "method,variant,stage,seed,n_missing,rmse,mspe,mspe_excluded,empty";
  for (const auto& p : kPatterns)
    out << ',' << p << "_count," << p << "_rmse," << p << "_mspe";
  out << "\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.variant << ',' << r.stage << ',' << r.seed << ','
        << r.n_missing << ',' << fmt(r.rmse) << ',' << fmt(r.mspe) << ','
        << r.mspe_excluded << ',' << (r.empty ? 1 : 0);
    for (const auto& p : kPatterns) {
      const auto it = r.per_pattern.find(p);
      if (it == r.per_pattern.end())
        out << ",0,0,0";
      else
        out << ',' << it->second.count << ',' << fmt(it->second.rmse) << ','
            << fmt(it->second.mspe);
    }
    out << "\n";
  }
}

std::vector<ReconstructionReport> read_reports_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("reports: cannot open " + file.string());
  std::string header;
  std::getline(in, header);
  std::vector<ReconstructionReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    ReconstructionReport r;
    auto next = [&]() {
      if (!std::getline(ss, tok, ',')) throw ValidationError("reports: short row");
      return tok;
    };
    r.method = next();
    r.variant = next();
    r.stage = next();
    r.seed = std::stoull(next());
    r.n_missing = std::stol(next());
    r.rmse = std::stod(next());
    r.mspe = std::stod(next());
    r.mspe_excluded = std::stol(next());
    r.empty = next() == "1";
    for (const auto& p : kPatterns) {
      PatternMetrics pm;
      pm.count = std::stol(next());
      pm.rmse = std::stod(next());
      pm.mspe = std::stod(next());
      if (pm.count > 0) r.per_pattern[p] = pm;
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_reports_json(const std::filesystem::path& file,
                        const std::vector<ReconstructionReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    json j;
    j["method"] = r.method;
    j["variant"] = r.variant;
    j["stage"] = r.stage;
    j["seed"] = r.seed;
    j["n_missing"] = r.n_missing;
    j["rmse"] = r.rmse;
    j["mspe"] = r.mspe;
    j["mspe_excluded"] = r.mspe_excluded;
    j["empty"] = r.empty;
    json pp = json::object();
    for (const auto& [name, pm] : r.per_pattern) {
      pp[name] = {{"count", pm.count},
                  {"rmse", pm.rmse},
                  {"mspe", pm.mspe},
                  {"mspe_excluded", pm.mspe_excluded}};
    }
    j["per_pattern"] = std::move(pp);
    arr.push_back(std::move(j));
  }
  std::ofstream out(file);
  if (!out) throw ComputeError("reports: cannot write " + file.string());
  out << arr.dump(1) << "\n";
}

}  // namespace pmurec::pipeline
