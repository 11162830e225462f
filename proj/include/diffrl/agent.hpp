#pragma once

#include <map>
#include <memory>
#include <string>

#include "diffrl/checkpoint.hpp"
#include "diffrl/config.hpp"
#include "diffrl/env.hpp"

namespace diffrl {

using MetricMap = std::map<std::string, double>;

// A learner bound to one environment's shapes. The trainer owns the
// interaction loop; the agent owns networks, buffers, and update cadence.
// Per-frame contract: act -> env.step -> observe -> update, strictly in that
// order (act() may stash per-step side data that observe() consumes).
class Agent {
public:
    virtual ~Agent() = default;

    virtual const std::string& algo() const = 0;

    // Exploration action for training rollouts, inside the action box.
    virtual std::vector<double> act(std::span<const double> state, Rng& rng) = 0;

    // Evaluation action. bon_n > 1 asks for best-of-N reranking by the
    // learned Q (DomainError on agents without one); bon_n <= 1 is the plain
    // eval action (policy mean for Gaussians, a chain draw for diffusion).
    virtual std::vector<double> act_eval(std::span<const double> state, Rng& rng, long bon_n) = 0;

    // Plain policy draws for a batch of states (distribution probes).
    virtual MatD sample_actions(const MatD& states, Rng& rng) = 0;

    virtual void observe(const TransitionRecord& tr) = 0;

    // Runs whatever updates are due after this frame; empty map if none ran.
    virtual MetricMap update(long frame, Rng& rng) = 0;

    // Inference state only (nets, temperatures, references) — optimizer
    // moments are not captured, so resuming training is out of scope.
    virtual void save(Checkpoint& ck) const = 0;
    virtual void load(const Checkpoint& ck) = 0;
};

std::unique_ptr<Agent> make_agent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng);

}  // namespace diffrl
