#include "hrvit/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hrvit/tensor.hpp"

namespace hrvit {

namespace {

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

/// One block per branch in every module.
ArchConfig skeleton(std::vector<int> modules) {
  ArchConfig c;
  c.modules_per_stage = std::move(modules);
  c.blocks.resize(c.num_stages);
  for (int s = 0; s < c.num_stages; ++s) {
    c.blocks[s].assign(c.modules_per_stage[s], std::vector<int>(s + 1, 1));
  }
  return c;
}

}  // namespace

int ArchConfig::branch_depth(int branch) const {
  int total = 0;
  for (const auto& stage : blocks)
    for (const auto& module : stage)
      if (branch < static_cast<int>(module.size())) total += module[branch];
  return total;
}

std::vector<int> ArchConfig::third_branch_assignment() const {
  std::vector<int> out;
  for (const auto& stage : blocks)
    for (const auto& module : stage)
      if (module.size() > 2) out.push_back(module[2]);
  return out;
}

void ArchConfig::validate() const {
  auto fail = [this](const std::string& field, const std::string& why) {
    throw ConfigError("config '" + name + "': " + field + ": " + why);
  };
  if (num_stages < 1 || num_stages > 4) fail("num_stages", "must be between 1 and 4");
  const auto n = static_cast<std::size_t>(num_stages);
  if (channels.size() != n) fail("channels", "needs " + std::to_string(n) + " entries");
  if (head_dims.size() != n) fail("head_dims", "needs " + std::to_string(n) + " entries");
  if (windows.size() != n) fail("windows", "needs " + std::to_string(n) + " entries");
  if (mixcfn_ratios.size() != n) fail("mixcfn_ratios", "needs " + std::to_string(n) + " entries");
  if (modules_per_stage.size() != n) fail("modules_per_stage", "needs " + std::to_string(n) + " entries");
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = "branch " + std::to_string(i + 1);
    if (channels[i] < 1) fail("channels", b + " must be positive");
    if (head_dims[i] < 1 || channels[i] % head_dims[i] != 0) {
      fail("head_dims", b + ": " + std::to_string(channels[i]) + " channels not divisible by " +
                            std::to_string(head_dims[i]));
    }
    const auto heads = channels[i] / head_dims[i];
    if (heads % 2 != 0) fail("head_dims", b + ": head count " + std::to_string(heads) + " is odd");
    if (windows[i] < 1) fail("windows", b + " must be >= 1");
    if (mixcfn_ratios[i] < 1) fail("mixcfn_ratios", b + " must be >= 1");
    if (toggles.mixcfn && (channels[i] * mixcfn_ratios[i]) % 2 != 0) {
      fail("mixcfn_ratios", b + ": r·C must be even");
    }
    if (modules_per_stage[i] < 1) {
      fail("modules_per_stage", "stage " + std::to_string(i + 1) + " needs at least one module");
    }
  }
  if (max_drop_path < 0.0 || max_drop_path >= 1.0) fail("max_drop_path", "must lie in [0, 1)");
  if (blocks.size() != n) fail("blocks", "needs one entry per stage");
  for (std::size_t s = 0; s < n; ++s) {
    if (blocks[s].size() != static_cast<std::size_t>(modules_per_stage[s])) {
      fail("blocks.stage" + std::to_string(s + 1),
           "has " + std::to_string(blocks[s].size()) + " modules, modules_per_stage says " +
               std::to_string(modules_per_stage[s]));
    }
    for (std::size_t m = 0; m < blocks[s].size(); ++m) {
      const auto key = "blocks.stage" + std::to_string(s + 1) + ".module" + std::to_string(m + 1);
      if (blocks[s][m].size() != s + 1) fail(key, "needs " + std::to_string(s + 1) + " branch counts");
      for (int c : blocks[s][m]) {
        if (c < 0) fail(key, "block counts must be nonnegative");
      }
    }
  }
  if (num_stages >= 3) {
    const auto per_module = third_branch_assignment();
    const int total = std::accumulate(per_module.begin(), per_module.end(), 0);
    const auto check = validate_assignment(total, per_module, relaxed_assignment);
    if (!check.ok) fail("blocks", "third-branch assignment " + join(per_module) + " " + check.reason);
  }
}

AssignmentCheck validate_assignment(int total, const std::vector<int>& per_module, bool relaxed) {
  const int sum = std::accumulate(per_module.begin(), per_module.end(), 0);
  if (sum != total) {
    throw ConfigError("assignment " + join(per_module) + " sums to " + std::to_string(sum) +
                      ", expected " + std::to_string(total));
  }
  if (per_module.empty()) return {true, ""};
  const auto [lo, hi] = std::minmax_element(per_module.begin(), per_module.end());
  const int modules = static_cast<int>(per_module.size());
  const int bound = (total + modules - 1) / modules;
  if (*hi - *lo <= bound || relaxed) return {true, ""};
  return {false, "is not nearly even: spread " + std::to_string(*hi - *lo) + " exceeds " +
                     std::to_string(bound)};
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"b1", "b2", "b3"};
  return names;
}

ArchConfig build_variant(const std::string& name, bool cityscapes_windows) {
  ArchConfig c = skeleton({1, 1, 3, 1});
  c.name = "hrvit_" + name;
  c.windows = {1, 2, 7, 7};
  if (name == "b1") {
    c.channels = {32, 64, 128, 256};
    c.head_dims = {16, 32, 32, 32};
    c.mixcfn_ratios = {4, 4, 4, 4};
    c.blocks[2] = {{1, 1, 6}, {1, 1, 6}, {1, 1, 6}};
    c.blocks[3] = {{1, 1, 2, 4}};
  } else if (name == "b2") {
    c.channels = {48, 96, 240, 384};
    c.head_dims = {24, 24, 24, 24};
    c.mixcfn_ratios = {2, 3, 3, 3};
    c.blocks[2] = {{1, 1, 6}, {1, 1, 6}, {1, 1, 6}};
    c.blocks[3] = {{1, 1, 6, 4}};
  } else if (name == "b3") {
    c.channels = {64, 128, 256, 512};
    c.head_dims = {32, 32, 32, 32};
    c.mixcfn_ratios = {2, 2, 2, 2};
    c.blocks[2] = {{1, 1, 6}, {1, 1, 6}, {1, 1, 6}};
    c.blocks[3] = {{1, 1, 6, 6}};
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected b1, b2 or b3)");
  }
  if (cityscapes_windows) c.windows = {1, 2, 9, 9};
  c.validate();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line;
};

class Reader {
 public:
  Reader(std::map<std::string, Entry> entries, std::string source)
      : entries_(std::move(entries)), source_(std::move(source)) {}

  const Entry& raw(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  std::string text(const std::string& key) { return raw(key).value; }

  template <typename T>
  std::vector<T> list(const std::string& key) {
    const auto& e = raw(key);
    std::vector<T> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(integer(trim(item), key, e.line)));
    return out;
  }

  long long integer(const std::string& s, const std::string& key, int line) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size()) {
      throw ConfigError(source_ + ":" + std::to_string(line) + ": '" + key +
                        "' expects integers, got '" + s + "'");
    }
    return v;
  }

  long long integer(const std::string& key) {
    const auto& e = raw(key);
    return integer(e.value, key, e.line);
  }

  double real(const std::string& key) {
    const auto& e = raw(key);
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(e.value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != e.value.size() || e.value.empty()) {
      throw ConfigError(source_ + ":" + std::to_string(e.line) + ": '" + key +
                        "' expects a number, got '" + e.value + "'");
    }
    return v;
  }

  bool boolean(const std::string& key) {
    const auto& e = raw(key);
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    throw ConfigError(source_ + ":" + std::to_string(e.line) + ": '" + key +
                      "' expects true or false, got '" + e.value + "'");
  }

  void reject_unused() const {
    for (const auto& [key, e] : entries_) {
      if (!used_.count(key)) {
        throw ConfigError(source_ + ":" + std::to_string(e.line) + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
  std::string source_;
};

const char* const kToggleKeys[] = {"share_kv", "des", "parallel_conv", "extra_nl_bn",
                                   "dense_fusion", "mixcfn", "eff_patch_embed"};

bool* toggle_field(Toggles& t, int i) {
  bool* fields[] = {&t.share_kv, &t.des, &t.parallel_conv, &t.extra_nl_bn,
                    &t.dense_fusion, &t.mixcfn, &t.eff_patch_embed};
  return fields[i];
}

std::string block_key(int s, int m) {
  return "blocks.stage" + std::to_string(s + 1) + ".module" + std::to_string(m + 1);
}

}  // namespace

ArchConfig parse_config(const std::string& text, const std::string& source) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
    if (entries.count(key)) {
      throw ConfigError(source + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    entries[key] = {trim(line.substr(eq + 1)), number};
  }

  Reader r(std::move(entries), source);
  ArchConfig c;
  c.name = r.text("name");
  c.num_stages = static_cast<int>(r.integer("num_stages"));
  c.channels = r.list<std::int64_t>("channels");
  c.head_dims = r.list<std::int64_t>("head_dims");
  c.windows = r.list<int>("windows");
  c.mixcfn_ratios = r.list<int>("mixcfn_ratios");
  c.modules_per_stage = r.list<int>("modules_per_stage");
  if (c.num_stages < 1 || c.num_stages > 4) {
    throw ConfigError(source + ": num_stages must be between 1 and 4");
  }
  if (c.modules_per_stage.size() != static_cast<std::size_t>(c.num_stages)) {
    throw ConfigError(source + ": modules_per_stage needs " + std::to_string(c.num_stages) +
                      " entries");
  }
  c.blocks.resize(c.num_stages);
  for (int s = 0; s < c.num_stages; ++s) {
    for (int m = 0; m < c.modules_per_stage[s]; ++m) c.blocks[s].push_back(r.list<int>(block_key(s, m)));
  }
  for (int i = 0; i < 7; ++i) *toggle_field(c.toggles, i) = r.boolean(kToggleKeys[i]);
  c.max_drop_path = r.real("max_drop_path");
  c.relaxed_assignment = r.boolean("relaxed_assignment");
  r.reject_unused();
  c.validate();
  return c;
}

ArchConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const auto text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return config_from_json(text, path);
  return parse_config(text, path);
}

std::string config_to_json(const ArchConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["num_stages"] = cfg.num_stages;
  j["channels"] = cfg.channels;
  j["head_dims"] = cfg.head_dims;
  j["windows"] = cfg.windows;
  j["mixcfn_ratios"] = cfg.mixcfn_ratios;
  j["modules_per_stage"] = cfg.modules_per_stage;
  j["blocks"] = cfg.blocks;
  Toggles t = cfg.toggles;
  for (int i = 0; i < 7; ++i) j["toggles"][kToggleKeys[i]] = *toggle_field(t, i);
  j["max_drop_path"] = cfg.max_drop_path;
  j["relaxed_assignment"] = cfg.relaxed_assignment;
  return j.dump(2) + "\n";
}

ArchConfig config_from_json(const std::string& text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j["config"].is_object()) j = nlohmann::json(j["config"]);
  const std::set<std::string> known{"name", "num_stages", "channels", "head_dims", "windows",
                                    "mixcfn_ratios", "modules_per_stage", "blocks", "toggles",
                                    "max_drop_path", "relaxed_assignment"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(source + ": unknown key '" + key + "'");
  }
  auto field = [&](const std::string& key) -> const nlohmann::json& {
    if (!j.contains(key)) throw ConfigError(source + ": missing key '" + key + "'");
    return j.at(key);
  };
  ArchConfig c;
  try {
    c.name = field("name").get<std::string>();
    c.num_stages = field("num_stages").get<int>();
    c.channels = field("channels").get<std::vector<std::int64_t>>();
    c.head_dims = field("head_dims").get<std::vector<std::int64_t>>();
    c.windows = field("windows").get<std::vector<int>>();
    c.mixcfn_ratios = field("mixcfn_ratios").get<std::vector<int>>();
    c.modules_per_stage = field("modules_per_stage").get<std::vector<int>>();
    c.blocks = field("blocks").get<std::vector<std::vector<std::vector<int>>>>();
    const auto& toggles = field("toggles");
    for (int i = 0; i < 7; ++i) {
      if (!toggles.contains(kToggleKeys[i])) {
        throw ConfigError(source + ": missing key 'toggles." + std::string(kToggleKeys[i]) + "'");
      }
      *toggle_field(c.toggles, i) = toggles.at(kToggleKeys[i]).get<bool>();
    }
    c.max_drop_path = field("max_drop_path").get<double>();
    c.relaxed_assignment = field("relaxed_assignment").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  c.validate();
  return c;
}

std::string serialize_config(const ArchConfig& cfg) {
  std::ostringstream os;
  os << "name = " << cfg.name << "\n"
     << "num_stages = " << cfg.num_stages << "\n"
     << "channels = " << join(cfg.channels) << "\n"
     << "head_dims = " << join(cfg.head_dims) << "\n"
     << "windows = " << join(cfg.windows) << "\n"
     << "mixcfn_ratios = " << join(cfg.mixcfn_ratios) << "\n"
     << "modules_per_stage = " << join(cfg.modules_per_stage) << "\n";
  for (std::size_t s = 0; s < cfg.blocks.size(); ++s) {
    for (std::size_t m = 0; m < cfg.blocks[s].size(); ++m) {
      os << block_key(static_cast<int>(s), static_cast<int>(m)) << " = " << join(cfg.blocks[s][m])
         << "\n";
    }
  }
  Toggles t = cfg.toggles;
  for (int i = 0; i < 7; ++i) os << kToggleKeys[i] << " = " << (*toggle_field(t, i) ? "true" : "false") << "\n";
  char rate[32];
  const auto end = std::to_chars(rate, rate + sizeof rate, cfg.max_drop_path).ptr;
  os << "max_drop_path = " << std::string(rate, end) << "\n"
     << "relaxed_assignment = " << (cfg.relaxed_assignment ? "true" : "false") << "\n";
  return os.str();
}

std::vector<BlockRate> drop_path_schedule(const ArchConfig& cfg) {
  const int third_total = cfg.num_stages >= 3 ? cfg.branch_depth(2) : 0;
  std::vector<BlockRate> out;
  int third_seen = 0;
  for (int s = 0; s < cfg.num_stages; ++s) {
    for (int m = 0; m < static_cast<int>(cfg.blocks[s].size()); ++m) {
      const auto& counts = cfg.blocks[s][m];
      // Third-branch rates of this module first, so other branches can follow them.
      std::vector<double> third;
      if (counts.size() > 2) {
        for (int k = 0; k < counts[2]; ++k) {
          ++third_seen;
          third.push_back(cfg.max_drop_path * third_seen / third_total);
        }
      }
      const double module_rate = third.empty() ? 0.0 : *std::max_element(third.begin(), third.end());
      for (int b = 0; b < static_cast<int>(counts.size()); ++b) {
        for (int k = 0; k < counts[b]; ++k) {
          out.push_back({s, m, b, k, b == 2 ? third[k] : module_rate});
        }
      }
    }
  }
  return out;
}

}  // namespace hrvit
