#include <CLI11.hpp>
#include <json.hpp>

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "hrvit/checks.hpp"
#include "hrvit/config.hpp"
#include "hrvit/cost.hpp"
#include "hrvit/graph.hpp"

using namespace hrvit;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything that determines a command's output.
struct RunManifest {
  std::string variant;
  std::string config_path;
  bool cityscapes_windows = false;
  std::uint64_t seed = 0;
  std::string resolution = "224x224";
  std::string head;
  std::string format;
  std::string out;
};

std::uint64_t default_seed() {
  const char* env = std::getenv("HRVIT_SEED");
  if (!env || !*env) return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("HRVIT_SEED must be a non-negative integer, got '") + env + "'");
  }
}

ArchConfig resolve_config(const RunManifest& m) {
  if (!m.variant.empty() && !m.config_path.empty()) throw UsageError("give either --variant or --config, not both");
  ArchConfig cfg;
  if (!m.config_path.empty()) {
    cfg = load_config(m.config_path);
    if (m.cityscapes_windows) {
      for (std::size_t b = 2; b < cfg.windows.size(); ++b) cfg.windows[b] = 9;
    }
  } else {
    cfg = build_variant(m.variant.empty() ? "b1" : m.variant, m.cityscapes_windows);
  }
  return cfg;
}

std::pair<std::int64_t, std::int64_t> parse_resolution(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const auto h = std::stoll(text.substr(0, x), &a);
    const auto w = std::stoll(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::exception&) {
    throw UsageError("resolution must look like HxW, got '" + text + "'");
  }
}

std::optional<std::int64_t> parse_head(const std::string& text) {
  if (text.empty() || text == "none") return std::nullopt;
  if (text.rfind("cls:", 0) == 0) {
    try {
      std::size_t used = 0;
      const auto n = std::stoll(text.substr(4), &used);
      if (used == text.size() - 4 && n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  throw UsageError("--head expects cls:N with N > 0, got '" + text + "'");
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw UsageError("cannot write '" + out + "'");
  f << text;
}

std::uint64_t checksum(const std::vector<Tensor>& tensors) {
  std::uint64_t sum = 0;
  for (const auto& t : tensors)
    for (double v : t.data()) sum += mix64(std::bit_cast<std::uint64_t>(v));
  return sum;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// summarize -----------------------------------------------------------------

std::string summarize(const ArchConfig& cfg, const std::string& format) {
  std::map<std::tuple<int, int, int>, std::vector<double>> rates;
  for (const auto& r : drop_path_schedule(cfg)) rates[{r.stage, r.module, r.branch}].push_back(r.rate);
  if (format == "json") {
    json j;
    j["config"] = json::parse(config_to_json(cfg));
    j["modules"] = json::array();
    for (int s = 0; s < cfg.num_stages; ++s)
      for (int m = 0; m < cfg.modules_per_stage[s]; ++m)
        for (int b = 0; b <= s; ++b) {
          j["modules"].push_back({{"stage", s + 1},
                                  {"module", m + 1},
                                  {"branch", b + 1},
                                  {"blocks", cfg.blocks[s][m][b]},
                                  {"channels", cfg.channels[b]},
                                  {"window", cfg.windows[b]},
                                  {"mixcfn_ratio", cfg.mixcfn_ratios[b]},
                                  {"drop_path", rates[{s, m, b}]}});
        }
    return j.dump(2) + "\n";
  }
  if (format != "text") throw UsageError("summarize --format expects text or json");
  std::ostringstream os;
  os << cfg.name << ": " << cfg.num_stages << " stages, " << cfg.num_branches() << " branches\n\n";
  os << "branch\tchannels\thead_dim\theads\twindow\tmixcfn_ratio\tdepth\n";
  for (int b = 0; b < cfg.num_branches(); ++b) {
    os << b + 1 << '\t' << cfg.channels[b] << '\t' << cfg.head_dims[b] << '\t'
       << cfg.channels[b] / cfg.head_dims[b] << '\t' << cfg.windows[b] << '\t' << cfg.mixcfn_ratios[b]
       << '\t' << cfg.branch_depth(b) << '\n';
  }
  os << "\nstage\tmodule\tbranch\tblocks\tchannels\twindow\tratio\tdrop_path\n";
  for (int s = 0; s < cfg.num_stages; ++s)
    for (int m = 0; m < cfg.modules_per_stage[s]; ++m)
      for (int b = 0; b <= s; ++b) {
        const auto& r = rates[{s, m, b}];
        std::string dp = "-";
        if (!r.empty()) dp = r.front() == r.back() ? fixed(r.front(), 4) : fixed(r.front(), 4) + ".." + fixed(r.back(), 4);
        os << s + 1 << '\t' << m + 1 << '\t' << b + 1 << '\t' << cfg.blocks[s][m][b] << '\t' << cfg.channels[b]
           << '\t' << cfg.windows[b] << '\t' << cfg.mixcfn_ratios[b] << '\t' << dp << '\n';
      }
  const auto& t = cfg.toggles;
  os << "\ntoggles: share_kv=" << t.share_kv << " des=" << t.des << " parallel_conv=" << t.parallel_conv
     << " extra_nl_bn=" << t.extra_nl_bn << " dense_fusion=" << t.dense_fusion << " mixcfn=" << t.mixcfn
     << " eff_patch_embed=" << t.eff_patch_embed << "\n";
  if (cfg.num_stages >= 3) {
    os << "third-branch assignment:";
    for (int n : cfg.third_branch_assignment()) os << ' ' << n;
    os << (cfg.relaxed_assignment ? " (relaxed)" : "") << "\n";
  }
  return os.str();
}

// ablate ----------------------------------------------------------------------

std::string ablation_table(const ArchConfig& cfg, const std::vector<Ablation>& toggles, std::int64_t h,
                           std::int64_t w, std::optional<std::int64_t> head, const std::string& format) {
  std::vector<AblationRow> rows;
  for (auto a : toggles) rows.push_back(ablation_report(cfg, a, h, w, head));
  if (format == "json") {
    json j;
    j["name"] = cfg.name;
    j["height"] = h;
    j["width"] = w;
    j["convention"] = kCountingConvention;
    j["base"] = {{"params", rows.front().base.params}, {"flops", rows.front().base.flops}};
    j["rows"] = json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"toggle", to_string(r.toggle)},
                           {"params", r.removed.params},
                           {"flops", r.removed.flops},
                           {"delta_params", r.delta_params()},
                           {"delta_flops", r.delta_flops()}});
    }
    return j.dump(2) + "\n";
  }
  if (format != "text" && format != "tsv") throw UsageError("ablate --format expects text, tsv or json");
  std::ostringstream os;
  if (format == "tsv") {
    os << "toggle\tparams\tflops\tdelta_params\tdelta_flops\n";
    os << "base\t" << rows.front().base.params << '\t' << rows.front().base.flops << "\t0\t0\n";
    for (const auto& r : rows) {
      os << "-" << to_string(r.toggle) << '\t' << r.removed.params << '\t' << r.removed.flops << '\t'
         << r.delta_params() << '\t' << r.delta_flops() << '\n';
    }
    return os.str();
  }
  const auto& base = rows.front().base;
  os << cfg.name << " at " << h << "x" << w << (head ? " with head cls:" + std::to_string(*head) : " (backbone)")
     << ", FLOPs counted as MACs\n\n";
  os << std::left << std::setw(20) << "variant" << std::right << std::setw(11) << "params(M)" << std::setw(11)
     << "dP(M)" << std::setw(11) << "FLOPs(G)" << std::setw(11) << "dF(G)" << std::setw(9) << "dF(%)" << "\n";
  auto line = [&](const std::string& name, const CostTotals& t) {
    const double dp = static_cast<double>(t.params - base.params), df = static_cast<double>(t.flops - base.flops);
    os << std::left << std::setw(20) << name << std::right << std::setw(11) << fixed(t.params / 1e6, 3)
       << std::setw(11) << fixed(dp / 1e6, 3) << std::setw(11) << fixed(t.flops / 1e9, 3) << std::setw(11)
       << fixed(df / 1e9, 3) << std::setw(9) << fixed(100.0 * df / base.flops, 2) << "\n";
  };
  line(cfg.name, base);
  for (const auto& r : rows) line("- " + to_string(r.toggle), r.removed);
  return os.str();
}

// forward ---------------------------------------------------------------------

std::string forward_trace(const ArchConfig& cfg, std::int64_t h, std::int64_t w,
                          std::optional<std::int64_t> head, std::uint64_t seed) {
  validate_resolution(cfg, h, w);
  const auto graph = build_graph(cfg, head, seed);
  SplitMix64 input_rng(mix64(seed ^ 0x696d616765ULL));
  const Tensor image = randn({1, 3, h, w}, input_rng);
  std::ostringstream os;
  os << "# " << cfg.name << " " << h << "x" << w << " seed " << seed << "\n";
  os << "node\tpath\tshapes\tchecksum\n";
  NoGradGuard no_grad;
  const auto result = forward(graph, image, [&](const GraphNode& node, const std::vector<Tensor>& out) {
    os << node.id << '\t' << node.path() << '\t';
    for (std::size_t i = 0; i < out.size(); ++i) os << (i ? " " : "") << to_string(out[i].shape());
    os << '\t' << hex(checksum(out)) << '\n';
  });
  for (std::size_t b = 0; b < result.features.size(); ++b) {
    os << "# branch" << b + 1 << '\t' << to_string(result.features[b].shape()) << '\t'
       << hex(checksum({result.features[b]})) << '\n';
  }
  if (result.logits.defined()) os << "# logits\t" << to_string(result.logits.shape()) << '\t' << hex(checksum({result.logits})) << '\n';
  std::vector<Tensor> all = result.features;
  if (result.logits.defined()) all.push_back(result.logits);
  os << "# checksum\t" << hex(checksum(all)) << '\n';
  return os.str();
}

// export ----------------------------------------------------------------------

std::string export_graph(const ArchConfig& cfg, std::optional<std::int64_t> head, std::uint64_t seed) {
  const auto graph = build_graph(cfg, head, seed);
  json j;
  j["config"] = json::parse(config_to_json(cfg));
  j["seed"] = seed;
  j["head"] = head ? json(*head) : json(nullptr);
  j["nodes"] = json::array();
  for (const auto& node : graph.nodes) {
    json params = json::array();
    for (const auto& [name, t] : node_parameters(node)) {
      params.push_back({{"name", name}, {"shape", t.shape()}, {"checksum", hex(checksum({t}))}});
    }
    j["nodes"].push_back({{"id", node.id},
                          {"path", node.path()},
                          {"kind", to_string(node.kind)},
                          {"drop_path", node.drop_path},
                          {"params", params}});
  }
  return j.dump(2) + "\n";
}

void add_model_options(CLI::App* cmd, RunManifest& m) {
  cmd->add_option("--variant", m.variant, "Canonical variant: b1, b2 or b3");
  cmd->add_option("--config", m.config_path, "Configuration file (key = value text or JSON)");
  cmd->add_flag("--cityscapes-windows", m.cityscapes_windows, "Use window 9 on branches 3 and 4");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HRViT multi-branch backbone: architecture summaries, cost reports and checks"};
  app.require_subcommand(1);
  std::string suite = "all";
  std::string toggle = "all";
  std::string sizes_text = "7,9,11,13,15";
  bool graph_export = false;
  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  // One manifest per command, since CLI11 writes defaults at registration.
  RunManifest m_summarize, m_cost, m_check, m_forward, m_ablate, m_sweep, m_export;
  for (auto* m : {&m_summarize, &m_cost, &m_check, &m_forward, &m_ablate, &m_sweep, &m_export}) m->seed = seed;

  auto* summarize_cmd = app.add_subcommand("summarize", "Per-stage/module/branch architecture table");
  add_model_options(summarize_cmd, m_summarize);
  summarize_cmd->add_option("--format", m_summarize.format, "text or json")->default_val("text");
  summarize_cmd->add_option("--out", m_summarize.out, "Write to a file instead of stdout");

  auto* cost_cmd = app.add_subcommand("cost", "Per-node parameter and FLOP report");
  add_model_options(cost_cmd, m_cost);
  cost_cmd->add_option("--res", m_cost.resolution, "Input resolution HxW")->default_val("224x224");
  cost_cmd->add_option("--head", m_cost.head, "Attach a classification head: cls:N");
  cost_cmd->add_option("--format", m_cost.format, "tsv or json")->default_val("tsv");
  cost_cmd->add_option("--out", m_cost.out, "Write to a file instead of stdout");

  auto* check_cmd = app.add_subcommand("check", "Run verification suites");
  check_cmd->add_option("--suite", suite, "grad, oracle, invariant, scaling, counting or all")->default_val("all");
  check_cmd->add_option("--seed", m_check.seed, "Seed (default: HRVIT_SEED or 0)");
  check_cmd->add_option("--format", m_check.format, "text or json")->default_val("text");
  check_cmd->add_option("--out", m_check.out, "Write to a file instead of stdout");

  auto* forward_cmd = app.add_subcommand("forward", "Random-input forward pass with a per-node shape trace");
  add_model_options(forward_cmd, m_forward);
  forward_cmd->add_option("--res", m_forward.resolution, "Input resolution HxW")->default_val("224x224");
  forward_cmd->add_option("--head", m_forward.head, "Attach a classification head: cls:N");
  forward_cmd->add_option("--seed", m_forward.seed, "Seed for weights and input (default: HRVIT_SEED or 0)");
  forward_cmd->add_option("--out", m_forward.out, "Write to a file instead of stdout");

  auto* ablate_cmd = app.add_subcommand("ablate", "Cost deltas from removing one technique (or all)");
  add_model_options(ablate_cmd, m_ablate);
  ablate_cmd->add_option("variant_name", m_ablate.variant, "Variant (alternative to --variant)");
  ablate_cmd->add_option("--toggle", toggle, "share_kv, eff_patch_embed, mixcfn, parallel_conv, extra_nl_bn, dense_fusion, des or all")
      ->default_val("all");
  ablate_cmd->add_option("--res", m_ablate.resolution, "Input resolution HxW")->default_val("512x512");
  ablate_cmd->add_option("--head", m_ablate.head, "Attach a classification head: cls:N");
  ablate_cmd->add_option("--format", m_ablate.format, "text, tsv or json")->default_val("text");
  ablate_cmd->add_option("--out", m_ablate.out, "Write to a file instead of stdout");

  auto* sweep_cmd = app.add_subcommand("sweep", "Backbone FLOPs for window sizes on branches 3 and 4");
  add_model_options(sweep_cmd, m_sweep);
  sweep_cmd->add_option("--sizes", sizes_text, "Comma-separated window sizes")->default_val("7,9,11,13,15");
  sweep_cmd->add_option("--res", m_sweep.resolution, "Input resolution HxW")->default_val("512x512");
  sweep_cmd->add_option("--out", m_sweep.out, "Write to a file instead of stdout");

  auto* export_cmd = app.add_subcommand("export", "Write the configuration, or the built graph's parameter manifest");
  add_model_options(export_cmd, m_export);
  export_cmd->add_option("--format", m_export.format, "cfg or json")->default_val("cfg");
  export_cmd->add_flag("--graph", graph_export, "Export node list with parameter shapes and checksums (JSON)");
  export_cmd->add_option("--head", m_export.head, "Attach a classification head: cls:N");
  export_cmd->add_option("--seed", m_export.seed, "Seed for weights (default: HRVIT_SEED or 0)");
  export_cmd->add_option("--out", m_export.out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*summarize_cmd) {
      const auto& m = m_summarize;
      emit(summarize(resolve_config(m), m.format), m.out);
    } else if (*cost_cmd) {
      const auto& m = m_cost;
      const auto cfg = resolve_config(m);
      const auto [h, w] = parse_resolution(m.resolution);
      const auto report = formula_cost(cfg, parse_head(m.head), h, w);
      if (m.format == "json") {
        emit(to_json(report), m.out);
      } else if (m.format == "tsv") {
        emit(to_tsv(report), m.out);
      } else {
        throw UsageError("cost --format expects tsv or json");
      }
    } else if (*check_cmd) {
      const auto& m = m_check;
      if (m.format != "text" && m.format != "json") throw UsageError("check --format expects text or json");
      const auto reports = run_suite(suite, m.seed);
      int failed = 0;
      std::ostringstream os;
      json j = json::array();
      os << "suite\tcheck\tmeasured\ttolerance\tresult\tdetail\n";
      for (const auto& r : reports) {
        failed += !r.passed;
        std::ostringstream measured, tolerance;
        measured << std::setprecision(6) << r.measured;
        tolerance << std::setprecision(6) << r.tolerance;
        os << r.suite << '\t' << r.name << '\t' << measured.str() << '\t' << tolerance.str() << '\t'
           << (r.passed ? "PASS" : "FAIL") << '\t' << r.detail << '\n';
        j.push_back({{"suite", r.suite}, {"name", r.name}, {"measured", r.measured},
                     {"tolerance", r.tolerance}, {"passed", r.passed}, {"detail", r.detail}});
      }
      os << "# " << reports.size() << " checks, " << failed << " failed\n";
      emit(m.format == "json" ? j.dump(2) + "\n" : os.str(), m.out);
      return failed ? kCheckFailed : kOk;
    } else if (*forward_cmd) {
      const auto& m = m_forward;
      const auto cfg = resolve_config(m);
      const auto [h, w] = parse_resolution(m.resolution);
      emit(forward_trace(cfg, h, w, parse_head(m.head), m.seed), m.out);
    } else if (*ablate_cmd) {
      const auto& m = m_ablate;
      const auto cfg = resolve_config(m);
      const auto [h, w] = parse_resolution(m.resolution);
      validate_resolution(cfg, h, w);
      std::vector<Ablation> toggles;
      if (toggle == "all") {
        toggles = all_ablations();
      } else {
        toggles = {parse_ablation(toggle)};
      }
      emit(ablation_table(cfg, toggles, h, w, parse_head(m.head), m.format), m.out);
    } else if (*sweep_cmd) {
      const auto& m = m_sweep;
      const auto cfg = resolve_config(m);
      const auto [h, w] = parse_resolution(m.resolution);
      std::vector<int> sizes;
      std::stringstream ss(sizes_text);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          sizes.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw UsageError("--sizes expects comma-separated integers, got '" + sizes_text + "'");
        }
        if (sizes.back() < 1) throw UsageError("window sizes must be positive");
      }
      std::ostringstream os;
      os << "# " << cfg.name << " " << h << "x" << w << " backbone, windows on branches 3 and 4\n";
      os << "window\tparams\tflops\tattention_flops\n";
      for (const auto& row : window_sweep(cfg, sizes, h, w)) {
        os << row.window << '\t' << row.totals.params << '\t' << row.totals.flops << '\t' << row.attention_flops
           << '\n';
      }
      emit(os.str(), m.out);
    } else if (*export_cmd) {
      const auto& m = m_export;
      const auto cfg = resolve_config(m);
      if (graph_export) {
        emit(export_graph(cfg, parse_head(m.head), m.seed), m.out);
      } else if (m.format == "cfg") {
        emit(serialize_config(cfg), m.out);
      } else if (m.format == "json") {
        emit(config_to_json(cfg), m.out);
      } else {
        throw UsageError("export --format expects cfg or json");
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}
