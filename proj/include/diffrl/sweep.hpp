#pragma once

#include "diffrl/config.hpp"

#include <span>

namespace diffrl {

// One axis value crossed with every seed.
struct SweepCell {
    std::string value;
    std::vector<std::string> run_dirs;
    std::vector<double> final_returns;  // last eval_return per seed
    std::vector<double> final_tv;       // last tv_oracle per seed; empty off analytic envs
};

struct SweepResult {
    std::string axis;
    std::string out_dir;
    std::vector<SweepCell> cells;
};

// Runs the cross product values x seeds under out_dir (one run directory per
// cell/seed), then aggregates: per-cell mean +- std learning curves into
// sweep_curves.csv and an SVG plot, per-cell final scores into
// sweep_summary.csv. The axis value is validated against the config schema
// before any run starts. jobs > 1 runs cells on that many threads (runs are
// independent processes in the shared-nothing sense: separate rngs, separate
// directories).
SweepResult sweep(const RunConfig& base, const std::string& axis, const std::vector<std::string>& values,
                  std::span<const long> seeds, const std::string& out_dir, long jobs = 1);

}  // namespace diffrl
