#pragma once

#include "diffrl/util.hpp"

namespace diffrl {

// Generalized advantage estimation for one contiguous buffer that may span
// several episodes. values has length T+1 (bootstrap for the state after the
// last step). terminal[t] true cuts both the bootstrap and the lambda carry;
// boundary[t] true (time-limit cut) keeps the bootstrap value supplied in
// values[t+1]... the caller arranges values so that values[t+1] is V of the
// state actually following step t (fresh episode starts break that, which is
// what boundary marks).
void gae(std::span<const double> rewards, std::span<const double> values, std::span<const uint8_t> terminal,
         std::span<const uint8_t> boundary, double gamma, double lambda, std::span<double> advantages,
         std::span<double> returns);

// On-policy rollout storage. next_value is V(s_{t+1}) recorded at push time,
// which sidesteps the cross-episode indexing problem entirely.
struct RolloutBuffer {
    double gamma = 0.99;
    double gae_lambda = 0.95;

    MatD states, actions;
    std::vector<double> rewards, values, next_values, logprobs;
    std::vector<uint8_t> terminal, boundary;
    std::vector<double> advantages, returns;

    long size() const { return static_cast<long>(rewards.size()); }
    bool computed() const { return !advantages.empty(); }

    void reserve(long cap, long obs_dim, long act_dim);
    void push(std::span<const double> s, std::span<const double> a, double r, double v, double next_v,
              double logp, bool term, bool bound);
    // Fills advantages/returns; callable exactly once per fill cycle.
    void compute_gae();
    void normalize_advantages();
    void clear();
};

}  // namespace diffrl
