#pragma once

#include <string>
#include <vector>

#include "irep/data.hpp"
#include "irep/search.hpp"
#include "irep/supernet.hpp"

namespace irep {

// Whole-run configuration: [net], [data] and [search] tables plus a few
// run-level knobs. Field names mirror the library structs one-to-one.
struct RunConfig {
  NetConfig net;
  SynthSpec data;
  std::string data_source = "synth";  // "synth" or "binary"
  std::string data_path;
  SearchConfig search;
  int threads = 0;   // kernel thread cap; 0 = OpenMP default
  int best_k = 1;    // fused models exported by `search`
  bool export_f32 = false;
};

RunConfig default_config();

// TOML-syntax subset: [tables], key = value with strings, numbers, booleans
// and flat arrays. Unknown keys are rejected.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// `--set table.key=value` override, applied after file parsing
void apply_override(RunConfig& cfg, const std::string& assignment);

// Canonical round-trippable text form; stored inside checkpoints.
std::string config_to_text(const RunConfig& cfg);

}  // namespace irep
