#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hrvit/tensor.hpp"

namespace hrvit {

struct GradCheckResult {
  std::string op_name;
  double max_rel_error = 0.0;
  double epsilon = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::int64_t coordinates_checked = 0;
  /// Location of the worst (or first non-finite) coordinate.
  std::string detail;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Per-tensor cap on checked coordinates (0 = all). Coordinates beyond the
  /// cap are sampled deterministically from `seed`.
  std::int64_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of sum(f()^2) with respect to every tensor
/// in `wrt` against central finite differences. `f` must rebuild its graph
/// from the current values of `wrt` on every call; the checker perturbs those
/// values in place and restores them.
GradCheckResult grad_check(const std::string& op_name, const std::function<Tensor()>& f,
                           std::vector<Tensor> wrt, const GradCheckOptions& options = {});

/// Single-input form: checks d sum(f(x)^2) / dx.
GradCheckResult grad_check(const std::string& op_name,
                           const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double epsilon = 1e-5, double tolerance = 1e-4);

}  // namespace hrvit
