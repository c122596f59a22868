#include "irep/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "irep/errors.hpp"

namespace irep {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config: key " + key + " expects an integer, got '" + v + "'");
  }
}

double to_float(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config: key " + key + " expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw UsageError("config: key " + key + " expects true/false, got '" + v + "'");
}

std::string to_str(const std::string& key, const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    return v.substr(1, v.size() - 2);
  }
  throw UsageError("config: key " + key + " expects a quoted string, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw UsageError("config: key " + key + " expects an array like [8, 16]");
  }
  std::vector<int> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, item)));
  }
  return out;
}

void assign_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  // [net]
  if (key == "net.arch") {
    const std::string v = to_str(key, value);
    if (v == "vgg_small") cfg.net.arch = ArchKind::vgg_small;
    else if (v == "resnet_small") cfg.net.arch = ArchKind::resnet_small;
    else if (v == "custom") cfg.net.arch = ArchKind::custom;
    else throw UsageError("config: unknown net.arch '" + v + "'");
  } else if (key == "net.widths") {
    cfg.net.widths = to_int_list(key, value);
  } else if (key == "net.in_channels") {
    cfg.net.in_channels = static_cast<int>(to_int(key, value));
  } else if (key == "net.max_candidates") {
    cfg.net.max_candidates = static_cast<int>(to_int(key, value));
  }
  // [data]
  else if (key == "data.source") {
    const std::string v = to_str(key, value);
    if (v != "synth" && v != "binary") throw UsageError("config: unknown data.source '" + v + "'");
    cfg.data_source = v;
  } else if (key == "data.path") {
    cfg.data_path = to_str(key, value);
  } else if (key == "data.classes") {
    cfg.data.classes = static_cast<int>(to_int(key, value));
  } else if (key == "data.per_class") {
    cfg.data.per_class = static_cast<int>(to_int(key, value));
  } else if (key == "data.size") {
    cfg.data.size = static_cast<int>(to_int(key, value));
  } else if (key == "data.channels") {
    cfg.data.channels = static_cast<int>(to_int(key, value));
  } else if (key == "data.noise") {
    cfg.data.noise = to_float(key, value);
  } else if (key == "data.train_fraction") {
    cfg.data.train_fraction = to_float(key, value);
  } else if (key == "data.seed") {
    cfg.data.seed = static_cast<std::uint64_t>(to_int(key, value));
  }
  // [search]
  else if (key == "search.population_size") {
    cfg.search.population_size = static_cast<int>(to_int(key, value));
  } else if (key == "search.subnet_batch") {
    cfg.search.subnet_batch = static_cast<int>(to_int(key, value));
  } else if (key == "search.budget_ratio") {
    cfg.search.budget_ratio = to_float(key, value);
  } else if (key == "search.warmup_epochs") {
    cfg.search.warmup_epochs = static_cast<int>(to_int(key, value));
  } else if (key == "search.evolution_rounds") {
    cfg.search.evolution_rounds = static_cast<int>(to_int(key, value));
  } else if (key == "search.param_epochs_per_round") {
    cfg.search.param_epochs_per_round = static_cast<int>(to_int(key, value));
  } else if (key == "search.p_mut") {
    cfg.search.p_mut = to_float(key, value);
  } else if (key == "search.p_cross") {
    cfg.search.p_cross = to_float(key, value);
  } else if (key == "search.p_bit") {
    cfg.search.p_bit = to_float(key, value);
  } else if (key == "search.lr_w") {
    cfg.search.lr_w = to_float(key, value);
  } else if (key == "search.sgd_momentum") {
    cfg.search.sgd_momentum = to_float(key, value);
  } else if (key == "search.weight_decay") {
    cfg.search.weight_decay = to_float(key, value);
  } else if (key == "search.lr_arch") {
    cfg.search.lr_arch = to_float(key, value);
  } else if (key == "search.adam_beta1") {
    cfg.search.adam_beta1 = to_float(key, value);
  } else if (key == "search.adam_beta2") {
    cfg.search.adam_beta2 = to_float(key, value);
  } else if (key == "search.batch_size") {
    cfg.search.batch_size = static_cast<int>(to_int(key, value));
  } else if (key == "search.eval_batch") {
    cfg.search.eval_batch = static_cast<int>(to_int(key, value));
  } else if (key == "search.parent_fraction") {
    cfg.search.parent_fraction = to_float(key, value);
  } else if (key == "search.variation_fraction") {
    cfg.search.variation_fraction = to_float(key, value);
  } else if (key == "search.calib_batches") {
    cfg.search.calib_batches = static_cast<int>(to_int(key, value));
  } else if (key == "search.strategy") {
    cfg.search.strategy = to_str(key, value);
  } else if (key == "search.seed") {
    cfg.search.seed = static_cast<std::uint64_t>(to_int(key, value));
  }
  // [run]
  else if (key == "run.threads") {
    cfg.threads = static_cast<int>(to_int(key, value));
  } else if (key == "run.best_k") {
    cfg.best_k = static_cast<int>(to_int(key, value));
  } else if (key == "run.export_f32") {
    cfg.export_f32 = to_bool(key, value);
  } else {
    throw UsageError("config: unknown key '" + key + "'");
  }
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg = default_config();
  std::stringstream ss(text);
  std::string line, table;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw UsageError("config line " + std::to_string(lineno) + ": malformed table header");
      }
      table = trim(line.substr(1, line.size() - 2));
      if (table != "net" && table != "data" && table != "search" && table != "run") {
        throw UsageError("config: unknown table [" + table + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw UsageError("config line " + std::to_string(lineno) + ": empty key or value");
    }
    assign_key(cfg, table.empty() ? key : table + "." + key, value);
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UsageError("override must look like table.key=value, got '" + assignment + "'");
  }
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  // convenience: accept bare strings for the few string-typed keys
  if ((key == "net.arch" || key == "data.source" || key == "data.path" ||
       key == "search.strategy") &&
      !value.empty() && value.front() != '"') {
    value = "\"" + value + "\"";
  }
  assign_key(cfg, key, value);
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[net]\n";
  out << "arch = \""
      << (cfg.net.arch == ArchKind::vgg_small
              ? "vgg_small"
              : cfg.net.arch == ArchKind::resnet_small ? "resnet_small" : "custom")
      << "\"\n";
  out << "widths = [";
  for (std::size_t i = 0; i < cfg.net.widths.size(); ++i) {
    out << (i ? ", " : "") << cfg.net.widths[i];
  }
  out << "]\n";
  out << "in_channels = " << cfg.net.in_channels << "\n";
  out << "max_candidates = " << cfg.net.max_candidates << "\n";
  out << "[data]\n";
  out << "source = \"" << cfg.data_source << "\"\n";
  if (!cfg.data_path.empty()) out << "path = \"" << cfg.data_path << "\"\n";
  out << "classes = " << cfg.data.classes << "\n";
  out << "per_class = " << cfg.data.per_class << "\n";
  out << "size = " << cfg.data.size << "\n";
  out << "channels = " << cfg.data.channels << "\n";
  out.precision(17);
  out << "noise = " << cfg.data.noise << "\n";
  out << "train_fraction = " << cfg.data.train_fraction << "\n";
  out << "seed = " << cfg.data.seed << "\n";
  out << "[search]\n";
  out << "population_size = " << cfg.search.population_size << "\n";
  out << "subnet_batch = " << cfg.search.subnet_batch << "\n";
  out << "budget_ratio = " << cfg.search.budget_ratio << "\n";
  out << "warmup_epochs = " << cfg.search.warmup_epochs << "\n";
  out << "evolution_rounds = " << cfg.search.evolution_rounds << "\n";
  out << "param_epochs_per_round = " << cfg.search.param_epochs_per_round << "\n";
  out << "p_mut = " << cfg.search.p_mut << "\n";
  out << "p_cross = " << cfg.search.p_cross << "\n";
  out << "p_bit = " << cfg.search.p_bit << "\n";
  out << "lr_w = " << cfg.search.lr_w << "\n";
  out << "sgd_momentum = " << cfg.search.sgd_momentum << "\n";
  out << "weight_decay = " << cfg.search.weight_decay << "\n";
  out << "lr_arch = " << cfg.search.lr_arch << "\n";
  out << "adam_beta1 = " << cfg.search.adam_beta1 << "\n";
  out << "adam_beta2 = " << cfg.search.adam_beta2 << "\n";
  out << "batch_size = " << cfg.search.batch_size << "\n";
  out << "eval_batch = " << cfg.search.eval_batch << "\n";
  out << "parent_fraction = " << cfg.search.parent_fraction << "\n";
  out << "variation_fraction = " << cfg.search.variation_fraction << "\n";
  out << "calib_batches = " << cfg.search.calib_batches << "\n";
  out << "strategy = \"" << cfg.search.strategy << "\"\n";
  out << "seed = " << cfg.search.seed << "\n";
  out << "[run]\n";
  out << "threads = " << cfg.threads << "\n";
  out << "best_k = " << cfg.best_k << "\n";
  out << "export_f32 = " << (cfg.export_f32 ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace irep
