// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace pmurec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Bad input: unparsable file, violated precondition, malformed config.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Computation failed at runtime (divergence, singular system, I/O).
/// The CLI maps this to exit code 2.
class ComputeError : public std::runtime_error {
public:
  explicit ComputeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pmurec
