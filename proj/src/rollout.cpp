#include "diffrl/rollout.hpp"

#include <cmath>

namespace diffrl {

void gae(std::span<const double> rewards, std::span<const double> values, std::span<const uint8_t> terminal,
         std::span<const uint8_t> boundary, double gamma, double lambda, std::span<double> advantages,
         std::span<double> returns) {
    size_t T = rewards.size();
    if (values.size() != T + 1)
        throw DimensionError("gae values (needs bootstrap)", static_cast<long>(T + 1), static_cast<long>(values.size()));
    if (terminal.size() != T || advantages.size() != T || returns.size() != T)
        throw DimensionError("gae spans", static_cast<long>(T), static_cast<long>(advantages.size()));
    double carry = 0.0;
    for (long t = static_cast<long>(T) - 1; t >= 0; --t) {
        double nonterm = terminal[t] ? 0.0 : 1.0;
        double cut = (terminal[t] || (!boundary.empty() && boundary[t])) ? 0.0 : 1.0;
        double delta = rewards[t] + gamma * nonterm * values[t + 1] - values[t];
        carry = delta + gamma * lambda * cut * carry;
        advantages[t] = carry;
        returns[t] = advantages[t] + values[t];
    }
}

void RolloutBuffer::reserve(long cap, long obs_dim, long act_dim) {
    states = MatD(0, obs_dim);
    actions = MatD(0, act_dim);
    states.data.reserve(static_cast<size_t>(cap) * obs_dim);
    actions.data.reserve(static_cast<size_t>(cap) * act_dim);
    rewards.reserve(cap);
    values.reserve(cap);
    next_values.reserve(cap);
    logprobs.reserve(cap);
    terminal.reserve(cap);
    boundary.reserve(cap);
}

void RolloutBuffer::push(std::span<const double> s, std::span<const double> a, double r, double v,
                         double next_v, double logp, bool term, bool bound) {
    if (computed()) throw DomainError("rollout push after compute_gae; clear first");
    states.data.insert(states.data.end(), s.begin(), s.end());
    states.rows += 1;
    actions.data.insert(actions.data.end(), a.begin(), a.end());
    actions.rows += 1;
    rewards.push_back(r);
    values.push_back(v);
    next_values.push_back(next_v);
    logprobs.push_back(logp);
    terminal.push_back(term ? 1 : 0);
    boundary.push_back(bound ? 1 : 0);
}

void RolloutBuffer::compute_gae() {
    if (computed()) throw DomainError("compute_gae called twice");
    long T = size();
    if (T == 0) throw DomainError("compute_gae on empty rollout");
    advantages.assign(T, 0.0);
    returns.assign(T, 0.0);
    // Same recursion as gae(), but each step bootstraps from its own stored
    // next_value, so episode interleaving needs no index gymnastics.
    double carry = 0.0;
    for (long t = T - 1; t >= 0; --t) {
        double nonterm = terminal[t] ? 0.0 : 1.0;
        double cut = (terminal[t] || boundary[t]) ? 0.0 : 1.0;
        double delta = rewards[t] + gamma * nonterm * next_values[t] - values[t];
        carry = delta + gamma * gae_lambda * cut * carry;
        advantages[t] = carry;
        returns[t] = advantages[t] + values[t];
    }
}

void RolloutBuffer::normalize_advantages() {
    if (!computed()) throw DomainError("normalize before compute_gae");
    long T = size();
    if (T < 2) return;
    double mean = mean_of(advantages);
    double var = 0.0;
    for (double x : advantages) var += (x - mean) * (x - mean);
    var /= static_cast<double>(T);
    double inv = 1.0 / std::sqrt(var + 1e-8);
    for (double& x : advantages) x = (x - mean) * inv;
}

void RolloutBuffer::clear() {
    states = MatD(0, states.cols);
    actions = MatD(0, actions.cols);
    rewards.clear();
    values.clear();
    next_values.clear();
    logprobs.clear();
    terminal.clear();
    boundary.clear();
    advantages.clear();
    returns.clear();
}

}  // namespace diffrl
