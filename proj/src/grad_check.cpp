#include "hrvit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hrvit/ops.hpp"
#include "hrvit/random.hpp"

namespace hrvit {

GradCheckResult grad_check(const std::string& op_name, const std::function<Tensor()>& f,
                           std::vector<Tensor> wrt, const GradCheckOptions& options) {
  GradCheckResult result;
  result.op_name = op_name;
  result.epsilon = options.epsilon;
  result.tolerance = options.tolerance;
  if (options.epsilon <= 0.0) throw ConfigError("grad_check epsilon must be positive");

  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor loss = sum_squares(f());
    loss.backward();
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
    t.zero_grad();
  }

  auto objective = [&f]() {
    NoGradGuard guard;
    return sum_squares(f()).item();
  };

  SplitMix64 rng(options.seed);
  bool finite = true;
  for (std::size_t ti = 0; ti < wrt.size() && finite; ++ti) {
    auto values = wrt[ti].mutable_data();
    std::vector<std::int64_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    const auto cap = options.max_coords_per_tensor;
    if (cap > 0 && static_cast<std::int64_t>(coords.size()) > cap) {
      // Partial Fisher-Yates draw of `cap` distinct coordinates.
      for (std::int64_t i = 0; i < cap; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.next() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(cap);
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      const double original = values[c];
      values[c] = original + options.epsilon;
      const double up = objective();
      values[c] = original - options.epsilon;
      const double down = objective();
      values[c] = original;
      const double fd = (up - down) / (2.0 * options.epsilon);
      const double ad = analytic[ti][c];
      ++result.coordinates_checked;
      std::ostringstream where;
      where << "tensor " << ti << " coordinate " << c << " (fd=" << fd << ", ad=" << ad << ")";
      if (!std::isfinite(fd) || !std::isfinite(ad)) {
        result.max_rel_error = std::numeric_limits<double>::infinity();
        result.detail = "non-finite difference at " + where.str();
        finite = false;
        break;
      }
      const double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
      if (err > result.max_rel_error || result.detail.empty()) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        result.detail = where.str();
      }
    }
  }
  for (std::size_t i = 0; i < wrt.size(); ++i) wrt[i].set_requires_grad(saved_flags[i]);
  result.passed = finite && result.max_rel_error <= result.tolerance;
  return result;
}

GradCheckResult grad_check(const std::string& op_name,
                           const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double epsilon, double tolerance) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  options.tolerance = tolerance;
  return grad_check(op_name, [&f, &x]() { return f(x); }, {x}, options);
}

}  // namespace hrvit
