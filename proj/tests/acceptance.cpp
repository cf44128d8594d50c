#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "hrvit/checks.hpp"
#include "hrvit/config.hpp"
#include "hrvit/cost.hpp"
#include "hrvit/graph.hpp"

using namespace hrvit;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o{false, ""};
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = elapsed < budget_s;
  const bool ok = o.passed && in_time;
  failures += !ok;
  std::printf("%s criterion %d (%s): %s [%.2fs of %.0fs budget%s]\n", ok ? "PASS" : "FAIL", id, title.c_str(),
              o.detail.c_str(), elapsed, budget_s, in_time ? "" : ", over budget");
  std::fflush(stdout);
}

std::string pct(double measured, double target) {
  std::ostringstream os;
  os.precision(3);
  os << std::showpos << 100.0 * (measured / target - 1.0) << "%";
  return os.str();
}

Outcome suite_outcome(const std::vector<CheckReport>& reports, const std::string& what) {
  int failed = 0;
  double worst = 0.0;
  std::string first_failure;
  for (const auto& r : reports) {
    if (!r.passed) {
      if (!failed) first_failure = r.name + " measured " + std::to_string(r.measured) + " " + r.detail;
      ++failed;
    }
    worst = std::max(worst, r.measured);
  }
  std::ostringstream os;
  os << reports.size() << " " << what << ", " << failed << " failed";
  if (failed) os << "; first: " << first_failure;
  else os << "; largest measured " << worst;
  return {failed == 0, os.str()};
}

/// Expected sign of a removal delta; 0 means the published table shows no
/// change at its 0.1 rounding, so |delta| must stay under half that step.
struct SignRule {
  Ablation toggle;
  int params;
  int flops;
};

bool sign_ok(double delta, int expected, double half_step) {
  if (expected == 0) return std::abs(delta) < half_step;
  return expected > 0 ? delta > 0 : delta < 0;
}

}  // namespace

int main() {
  const std::vector<std::string> names{"b1", "b2", "b3"};
  const double target_params[] = {19.7e6, 32.5e6, 37.9e6};
  const double target_flops[] = {2.7e9, 5.1e9, 5.7e9};

  // Criteria 1 and 2 time each variant separately against its 5 s budget.
  auto per_variant = [&](const std::function<Outcome(const std::string&, int)>& body) {
    bool ok = true;
    std::string detail;
    for (int i = 0; i < 3; ++i) {
      const auto start = std::chrono::steady_clock::now();
      const auto o = body(names[i], i);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      char timing[48];
      std::snprintf(timing, sizeof timing, " in %.2fs", s);
      ok = ok && o.passed && s < 5.0;
      if (i) detail += "; ";
      detail += names[i] + " " + o.detail + timing + (s < 5.0 ? "" : " (over 5s)");
    }
    return Outcome{ok, detail};
  };

  criterion(1, "parameters with 1000-class head, +-10%", 15.0, [&] {
    return per_variant([&](const std::string& name, int i) {
      const auto graph = build_graph(build_variant(name), 1000, 0);
      const auto counted = count_params(graph);
      const auto formula = formula_cost(graph.config, 1000, 224, 224).totals.params;
      std::ostringstream os;
      os << counted << " vs " << target_params[i] / 1e6 << "M (" << pct(counted, target_params[i])
         << (formula == counted ? ", formula agrees)" : ", formula DISAGREES)");
      return Outcome{std::abs(counted / target_params[i] - 1.0) <= 0.10 && formula == counted, os.str()};
    });
  });

  criterion(2, "FLOPs (MACs) at 224x224 with head, +-15%", 15.0, [&] {
    return per_variant([&](const std::string& name, int i) {
      const auto graph = build_graph(build_variant(name), 1000, 0);
      const auto flops = count_flops(graph, 224, 224).totals.flops;
      std::ostringstream os;
      os << flops << " vs " << target_flops[i] / 1e9 << "G (" << pct(flops, target_flops[i]) << ")";
      return Outcome{std::abs(flops / target_flops[i] - 1.0) <= 0.15, os.str()};
    });
  });

  criterion(3, "ablation cost deltas, b1 at 512x512", 30.0, [] {
    const auto b1 = build_variant("b1");
    const std::vector<SignRule> rules{{Ablation::kShareKV, +1, +1},     {Ablation::kEffPatchEmbed, +1, +1},
                                      {Ablation::kMixCFN, -1, -1},      {Ablation::kParallelConv, 0, -1},
                                      {Ablation::kExtraNlBn, 0, 0},     {Ablation::kDenseFusion, -1, -1},
                                      {Ablation::kDES, 0, -1},          {Ablation::kAll, +1, +1}};
    bool ok = true;
    std::ostringstream os;
    for (const auto& rule : rules) {
      const auto row = ablation_report(b1, rule.toggle, 512, 512);
      const double dp = row.delta_params() / 1e6, df = row.delta_flops() / 1e9;
      const bool good = sign_ok(dp, rule.params, 0.05) && sign_ok(df, rule.flops, 0.05);
      ok = ok && good;
      os.precision(3);
      os << to_string(rule.toggle) << " " << std::showpos << dp << "M/" << df << "G" << std::noshowpos
         << (good ? "" : " (WRONG SIGN)") << "; ";
    }
    const auto kv = ablation_report(b1, Ablation::kShareKV, 512, 512);
    const bool kv_ok = std::abs(kv.delta_params() / 0.7e6 - 1.0) <= 0.25 &&
                       std::abs(kv.delta_flops() / 0.6e9 - 1.0) <= 0.25;
    os << "share_kv magnitude vs +0.7M/+0.6G: " << pct(kv.delta_params(), 0.7e6) << "/"
       << pct(kv.delta_flops(), 0.6e9) << (kv_ok ? "" : " (OUTSIDE 25%)");
    return Outcome{ok && kv_ok, os.str()};
  });

  criterion(4, "oracle equivalence, 10 instances per oracle", 60.0, [] {
    return suite_outcome(oracle_suite(0, 10), "oracle comparisons at tolerance 1e-10");
  });

  criterion(5, "gradient suite, 3 instances", 300.0, [] {
    return suite_outcome(grad_suite(0, 3), "finite-difference checks at max relative error 1e-4");
  });

  criterion(6, "shape and invariant suite", 120.0, [] {
    return suite_outcome(invariant_suite(0), "invariants");
  });

  criterion(7, "scaling-law suite", 120.0, [] { return suite_outcome(scaling_suite(), "scaling checks"); });

  criterion(8, "counting cross-check, 100 fuzzed configs", 120.0, [] {
    return suite_outcome(counting_suite(0, 100), "formula vs traversal / instrumented comparisons");
  });

  criterion(9, "assignment validator", 1.0, [] {
    const bool accepts = validate_assignment(20, {6, 6, 6, 2}, false).ok;
    const auto rejected = validate_assignment(20, {17, 1, 1, 1}, false);
    std::string detail = std::string("6-6-6-2 ") + (accepts ? "accepted" : "REJECTED") + "; 17-1-1-1 " +
                         (rejected.ok ? "ACCEPTED" : "rejected (" + rejected.reason + ")");
    return Outcome{accepts && !rejected.ok, detail};
  });

  std::printf("%s: %d failing criterion line(s)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
