#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrvit/config.hpp"
#include "hrvit/grad_check.hpp"
#include "hrvit/random.hpp"
#include "hrvit/tensor.hpp"

namespace hrvit {

/// Outcome of one verification.
struct CheckReport {
  std::string suite;
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

std::vector<double> values(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_identical(const Tensor& a, const Tensor& b);

/// Normal samples, redrawn while within `margin` of any kink.
Tensor randn_away_from(const Shape& shape, SplitMix64& rng, double std,
                       const std::vector<double>& kinks, double margin = 1e-2);

/// Gradient checks of every differentiable primitive on one random instance.
std::vector<GradCheckResult> op_grad_checks(SplitMix64& rng);
/// Gradient checks of every block type on one random tiny instance.
std::vector<GradCheckResult> block_grad_checks(SplitMix64& rng);

/// Small random architecture (1-4 stages, narrow branches, random toggles)
/// that validates and runs quickly at tiny resolutions.
ArchConfig fuzz_config(SplitMix64& rng);

/// Suites. Each is deterministic given the seed.
std::vector<CheckReport> grad_suite(std::uint64_t seed, int instances = 3);
std::vector<CheckReport> oracle_suite(std::uint64_t seed, int instances = 10);
std::vector<CheckReport> invariant_suite(std::uint64_t seed);
std::vector<CheckReport> scaling_suite();
std::vector<CheckReport> counting_suite(std::uint64_t seed, int fuzzed_configs = 100);

std::vector<CheckReport> run_suite(const std::string& suite, std::uint64_t seed);
const std::vector<std::string>& suite_names();

}  // namespace hrvit
