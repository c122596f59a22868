#pragma once

#include <string>

#include "irep/search.hpp"
#include "irep/supernet.hpp"

namespace irep {

// Full search snapshot: parameters, BN statistics, optimizer moments, rng
// state, counters and the population. Loading into a state built from the
// same config reproduces the training trajectory bitwise.
void save_checkpoint(const std::string& path, const SearchState& st,
                     const std::string& config_text);
// Returns the config text stored in the checkpoint.
std::string checkpoint_config_text(const std::string& path);
void load_checkpoint(const std::string& path, SearchState& st);

struct FusedModel {
  PlainNet net;
  SubnetMask mask;
};

void save_fused_model(const std::string& path, const PlainNet& net, const SubnetMask& mask,
                      bool as_f32);
FusedModel load_fused_model(const std::string& path);

}  // namespace irep
