#pragma once

#include "diffrl/agent.hpp"

namespace diffrl {

struct EvalResult {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> returns;  // undiscounted, one per episode
};

// Deterministic evaluation rollouts under the given stream. bon_n > 1 turns
// on best-of-N action reranking (agents without a Q function throw).
EvalResult evaluate(Agent& agent, const Env& env, long episodes, Rng& rng, long bon_n = 1);

// Checkpoint form: the config rebuilds the agent skeleton, the checkpoint
// fills in parameters. Dimension/algo mismatches throw.
EvalResult evaluate(const RunConfig& cfg, const std::string& checkpoint_path, long episodes,
                    uint64_t eval_seed, long bon_n = 1);

// Total-variation distance between the agent's action distribution at the
// environment's start state and the lambda-regularized analytic optimum.
// Analytic-Q environments only; grid is the oracle grid in 1d, 64 nodes per
// dimension otherwise (the histogram noise floor rules the oracle grid out).
double tv_to_oracle(Agent& agent, const Env& env, double lambda, long num_samples, Rng& rng);

// Full interaction/update/eval loop. Creates the run directory (auto-named
// under run_root() when out_dir is empty), writes config.json, metrics.csv,
// and checkpoint.bin, and returns the directory path. total_frames == 0
// leaves just the config snapshot. Three consecutive evaluations with any
// non-finite metric abort with a diagnostics file and NonFiniteError.
std::string train(const RunConfig& cfg, const std::string& out_dir = "");

// $DIFFRL_RUN_ROOT, or "runs" when unset.
std::string run_root();

}  // namespace diffrl
