#pragma once

#include <string>
#include <vector>

#include "diffrl/env.hpp"

namespace diffrl {

// Columnar binary transition file with a JSON sidecar (<path>.json) carrying
// env id, count, dims, and schema version. Round trips are bit-stable.
void save_transitions(const std::string& path, const std::string& env_name,
                      const std::vector<TransitionRecord>& records);

struct Dataset {
    std::string env_name;
    long obs_dim = 0;
    long act_dim = 0;
    std::vector<TransitionRecord> records;
};

Dataset load_transitions(const std::string& path);

}  // namespace diffrl
