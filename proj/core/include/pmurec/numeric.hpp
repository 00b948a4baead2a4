// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pmurec/rng.hpp"
#include "pmurec/types.hpp"

namespace pmurec::num {

/// Thin SVD, singular values sorted descending.
struct SVDResult {
  Matrix u;
  Vector s;
  Matrix v;
};

/// Deterministic thin SVD. Throws ValidationError on non-finite input and
/// ComputeError if the decomposition does not converge.
SVDResult svd(const Matrix& a);

struct ParamEntry {
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
  long step = 0;
};

/// Named learnable tensors with gradient slots and Adam state. Iteration
/// order is the lexicographic name order, which keeps every reduction and
/// serialization deterministic.
class ParamStore {
public:
  Matrix& add(const std::string& name, const Matrix& init);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Matrix& value(const std::string& name);
  const Matrix& value(const std::string& name) const;
  Matrix& grad(const std::string& name);
  const Matrix& grad(const std::string& name) const;

  void zero_grads();
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }
  size_t scalar_count() const;
  bool all_finite() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

private:
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  std::map<std::string, ParamEntry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every entry; increments step counters
/// and zeroes gradients afterward. A non-finite gradient aborts the step
/// with ComputeError, leaving parameters unchanged.
void adam_step(ParamStore& params, const AdamConfig& cfg);

/// Scalar loss callback. When `want_grad` is set the callee must
/// accumulate analytic gradients into the store's grad slots (which are
/// zeroed by the caller beforehand).
using LossFn = std::function<double(ParamStore&, bool want_grad)>;

/// Compares analytic gradients against central finite differences
/// (step 1e-5) at `probe_count` random coordinates. Returns the worst
/// relative error with a 1e-8 absolute floor. `name_filter`, when
/// non-empty, restricts probing to parameters whose name contains it.
double grad_check(const LossFn& f, ParamStore& params, int probe_count,
                  Rng& rng, const std::string& name_filter = "");

/// Checkpoint I/O: JSON map name -> shape + flat row-major values, with a
/// version field. Round-trips are bit-exact for finite doubles.
void save_params(const ParamStore& params, const std::filesystem::path& file);
void load_params(ParamStore& params, const std::filesystem::path& file);

}  // namespace pmurec::num
