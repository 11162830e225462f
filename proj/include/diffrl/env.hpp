#pragma once

#include "diffrl/density.hpp"
#include "diffrl/rng.hpp"

namespace diffrl {

enum class EnvId { bandit1d, bandit2d_multimodal, pointmass2d, pendulum };

struct EnvSpec {
    EnvId id = EnvId::bandit1d;
    const char* name = "bandit1d";
    long obs_dim = 1;
    long act_dim = 1;
    long horizon = 1;
    double gamma = 0.99;
    double reward_bound = 0.0;  // |reward| never exceeds this
};

struct TransitionRecord {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state;
    bool terminal = false;
    bool truncated = false;  // set by the driver at horizon, not by the env
};

// Stateless environments: the MDP state is the value passed in and out, so
// instances are freely shared across threads. For the pendulum the state is
// its observation (cos th, sin th, thdot), which is an invertible encoding.
class Env {
public:
    static Env make(EnvId id);
    static Env make(std::string_view name);

    const EnvSpec& spec() const { return spec_; }

    std::vector<double> reset(Rng& rng) const;
    TransitionRecord step(std::span<const double> state, std::span<const double> action, Rng& rng) const;

    // Analytic regularized-bandit machinery; bandits only.
    bool has_analytic_q() const;
    double q_star(std::span<const double> state, std::span<const double> action) const;
    void q_star_grad(std::span<const double> state, std::span<const double> action, std::span<double> out) const;

    // pi*(a|s) proportional to nu(a)*exp(Q*(s,a)/lambda) on a 1024-node grid
    // per dimension over the action box, uniform reference, trapezoid
    // normalization. lambda <= 0 -> DomainError.
    GridDensity optimal_policy_density(std::span<const double> state, double lambda) const;

    static constexpr double kActLow = -1.0;
    static constexpr double kActHigh = 1.0;
    static constexpr long kDensityGridNodes = 1024;

private:
    explicit Env(EnvSpec s) : spec_(s) {}
    void check_action(std::span<const double> a) const;
    EnvSpec spec_;
};

}  // namespace diffrl
