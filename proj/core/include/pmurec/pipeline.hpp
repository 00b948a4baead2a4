// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pmurec/datagen.hpp"
#include "pmurec/types.hpp"

namespace pmurec::pipeline {

/// X' = M .* X_obs + (1 - M) .* X_tilde; observed entries pass through
/// bit-exactly.
std::array<Matrix, 2> compose_reconstruction(const std::array<Matrix, 2>& x_obs,
                                             const Matrix& mask,
                                             const std::array<Matrix, 2>& x_tilde);

struct PatternMetrics {
  long count = 0;
  double rmse = 0.0;
  double mspe = 0.0;
  long mspe_excluded = 0;
};

struct ReconstructionReport {
  std::string method;
  std::string variant;
  std::string stage;  // online runs only
  uint64_t seed = 0;
  long n_missing = 0;
  double rmse = 0.0;
  double mspe = 0.0;  // percent
  long mspe_excluded = 0;
  bool empty = false;  // no missing entries to evaluate
  std::map<std::string, PatternMetrics> per_pattern;
  double wall_time_sec = 0.0;  // never serialized; reports must be replayable
};

/// Pools reconstruction errors over windows, restricted to missing
/// entries. MSPE excludes (and counts) cells with |x_true| <= 1e-3.
class MetricAccumulator {
public:
  void add(const datagen::MeasurementWindow& w,
           const std::array<Matrix, 2>& x_prime);
  ReconstructionReport finish(const std::string& method,
                              const std::string& variant, uint64_t seed) const;

private:
  struct Bucket {
    long count = 0;
    double se_sum = 0.0;
    double spe_sum = 0.0;
    long spe_count = 0;
    long spe_excluded = 0;
  };
  Bucket total_;
  std::map<std::string, Bucket> per_pattern_;
};

struct SvtConfig {
  double tau_rel = 0.5;   // threshold as a fraction of the first iterate's sigma_1
  int max_iters = 500;
  double tol = 1e-6;      // Frobenius change stop
  bool soft = false;      // soft shrink instead of hard truncation
};

/// Iterative singular-value thresholding: Y <- shrink_tau(Z),
/// Z <- M.*X_obs + (1-M).*Y. Returns the last iterate; `converged` is
/// false when the loop hits max_iters without meeting tol.
Matrix svt_complete(const Matrix& x_obs, const Matrix& mask,
                    const SvtConfig& cfg, bool* converged = nullptr);

/// Per-node linear interpolation in time with nearest-value
/// extrapolation; columns with no observations fall back to the mean of
/// the observed entries of the matrix (0 if none).
Matrix linear_interp_time(const Matrix& x_obs, const Matrix& mask);

/// method is "svt" or "linear_interp". `nonconverged`, when given,
/// counts SVT channels that hit max_iters.
std::array<Matrix, 2> baseline_reconstruct(const datagen::MeasurementWindow& w,
                                           const std::string& method,
                                           const SvtConfig& cfg,
                                           long* nonconverged = nullptr);

void write_reports_csv(const std::filesystem::path& file,
                       const std::vector<ReconstructionReport>& reports);
std::vector<ReconstructionReport> read_reports_csv(const std::filesystem::path& file);
void write_reports_json(const std::filesystem::path& file,
                        const std::vector<ReconstructionReport>& reports);

}  // namespace pmurec::pipeline
