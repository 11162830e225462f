#include "diffrl/env.hpp"

#include <cmath>

namespace diffrl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// pendulum constants: m=1, l=1, g=10, dt=0.05, torque = 2*action
constexpr double kPendG = 10.0, kPendDt = 0.05, kPendMaxSpeed = 8.0, kPendTorqueScale = 2.0;
// pointmass constants
constexpr double kPmDt = 0.1, kPmDamping = 0.95, kPmMaxSpeed = 1.0, kPmStartStd = 0.1;
constexpr double kGoalX = 0.6;  // goals at (+-kGoalX, 0) for both 2d tasks

double wrap_angle(double th) {
    th = std::fmod(th + kPi, 2.0 * kPi);
    if (th < 0.0) th += 2.0 * kPi;
    return th - kPi;
}

double bandit1d_q(double a) { return -(a - 0.5) * (a - 0.5); }

double bandit2d_q(double ax, double ay) {
    double d1 = (ax - kGoalX) * (ax - kGoalX) + ay * ay;
    double d2 = (ax + kGoalX) * (ax + kGoalX) + ay * ay;
    return -2.0 * std::min(d1, d2);
}

}  // namespace

Env Env::make(EnvId id) {
    EnvSpec s;
    s.id = id;
    switch (id) {
        case EnvId::bandit1d:
            s = {id, "bandit1d", 1, 1, 1, 0.99, 2.25};
            break;
        case EnvId::bandit2d_multimodal:
            s = {id, "bandit2d_multimodal", 1, 2, 1, 0.99, 2.0 * (1.0 + kGoalX) * (1.0 + kGoalX) + 2.0};
            break;
        case EnvId::pointmass2d:
            // worst case: |p| <= 0.3 start + horizon*dt*maxspeed = 4.3 per axis
            s = {id, "pointmass2d", 4, 2, 40, 0.99, 45.0};
            break;
        case EnvId::pendulum:
            s = {id, "pendulum", 3, 1, 200, 0.99, kPi * kPi + 0.1 * 64.0 + 0.001 + 0.1};
            break;
    }
    return Env(s);
}

Env Env::make(std::string_view name) {
    if (name == "bandit1d") return make(EnvId::bandit1d);
    if (name == "bandit2d_multimodal" || name == "bandit2d") return make(EnvId::bandit2d_multimodal);
    if (name == "pointmass2d") return make(EnvId::pointmass2d);
    if (name == "pendulum") return make(EnvId::pendulum);
    throw FormatError(strfmt("unknown env '%.*s'", static_cast<int>(name.size()), name.data()));
}

void Env::check_action(std::span<const double> a) const {
    if (static_cast<long>(a.size()) != spec_.act_dim)
        throw DimensionError("env action dim", spec_.act_dim, static_cast<long>(a.size()));
    for (double v : a)
        if (!(v >= kActLow && v <= kActHigh))
            throw DomainError(strfmt("action %g outside [%g, %g]", v, kActLow, kActHigh));
}

std::vector<double> Env::reset(Rng& rng) const {
    switch (spec_.id) {
        case EnvId::bandit1d:
        case EnvId::bandit2d_multimodal:
            return {0.0};
        case EnvId::pointmass2d: {
            // truncated Gaussian start keeps the reward bound a hard invariant
            double px = clampd(rng.normal(0.0, kPmStartStd), -0.3, 0.3);
            double py = clampd(rng.normal(0.0, kPmStartStd), -0.3, 0.3);
            return {px, py, 0.0, 0.0};
        }
        case EnvId::pendulum: {
            double th = rng.uniform(-kPi, kPi);
            double thdot = rng.uniform(-1.0, 1.0);
            return {std::cos(th), std::sin(th), thdot};
        }
    }
    return {};
}

TransitionRecord Env::step(std::span<const double> state, std::span<const double> action, Rng& rng) const {
    (void)rng;  // all toy dynamics are deterministic given (state, action)
    if (static_cast<long>(state.size()) != spec_.obs_dim)
        throw DimensionError("env state dim", spec_.obs_dim, static_cast<long>(state.size()));
    check_action(action);

    TransitionRecord tr;
    tr.state.assign(state.begin(), state.end());
    tr.action.assign(action.begin(), action.end());

    switch (spec_.id) {
        case EnvId::bandit1d:
        case EnvId::bandit2d_multimodal: {
            tr.reward = q_star(state, action);
            tr.next_state = tr.state;
            tr.terminal = true;
            break;
        }
        case EnvId::pointmass2d: {
            double px = state[0], py = state[1], vx = state[2], vy = state[3];
            vx = clampd(kPmDamping * vx + kPmDt * action[0], -kPmMaxSpeed, kPmMaxSpeed);
            vy = clampd(kPmDamping * vy + kPmDt * action[1], -kPmMaxSpeed, kPmMaxSpeed);
            px += kPmDt * vx;
            py += kPmDt * vy;
            double d1 = (px - kGoalX) * (px - kGoalX) + py * py;
            double d2 = (px + kGoalX) * (px + kGoalX) + py * py;
            tr.reward = -std::min(d1, d2) - 0.01 * squared_norm(action);
            tr.next_state = {px, py, vx, vy};
            tr.terminal = false;
            break;
        }
        case EnvId::pendulum: {
            double th = std::atan2(state[1], state[0]);
            double thdot = state[2];
            double a = action[0];
            double u = kPendTorqueScale * a;
            // cost on the pre-step state, gym style
            tr.reward = -(wrap_angle(th) * wrap_angle(th) + 0.1 * thdot * thdot + 0.001 * a * a);
            // semi-implicit Euler: velocity first, then angle
            double thacc = 1.5 * kPendG * std::sin(th) + 3.0 * u;  // 3g/(2l) sin + 3u/(m l^2)
            thdot = clampd(thdot + kPendDt * thacc, -kPendMaxSpeed, kPendMaxSpeed);
            th += kPendDt * thdot;
            tr.next_state = {std::cos(th), std::sin(th), thdot};
            tr.terminal = false;
            break;
        }
    }
    if (!std::isfinite(tr.reward) || std::abs(tr.reward) > spec_.reward_bound)
        throw DomainError(strfmt("reward %g outside declared bound %g", tr.reward, spec_.reward_bound));
    return tr;
}

bool Env::has_analytic_q() const {
    return spec_.id == EnvId::bandit1d || spec_.id == EnvId::bandit2d_multimodal;
}

double Env::q_star(std::span<const double> state, std::span<const double> action) const {
    (void)state;
    switch (spec_.id) {
        case EnvId::bandit1d:
            return bandit1d_q(action[0]);
        case EnvId::bandit2d_multimodal:
            return bandit2d_q(action[0], action[1]);
        default:
            throw DomainError(strfmt("%s has no analytic Q*", spec_.name));
    }
}

void Env::q_star_grad(std::span<const double> state, std::span<const double> action,
                      std::span<double> out) const {
    (void)state;
    switch (spec_.id) {
        case EnvId::bandit1d:
            out[0] = -2.0 * (action[0] - 0.5);
            return;
        case EnvId::bandit2d_multimodal: {
            double ax = action[0], ay = action[1];
            double d1 = (ax - kGoalX) * (ax - kGoalX) + ay * ay;
            double d2 = (ax + kGoalX) * (ax + kGoalX) + ay * ay;
            double gx = (d1 <= d2) ? kGoalX : -kGoalX;
            out[0] = -4.0 * (ax - gx);
            out[1] = -4.0 * ay;
            return;
        }
        default:
            throw DomainError(strfmt("%s has no analytic Q*", spec_.name));
    }
}

GridDensity Env::optimal_policy_density(std::span<const double> state, double lambda) const {
    if (!has_analytic_q()) throw DomainError(strfmt("%s has no optimal-policy oracle", spec_.name));
    if (!(lambda > 0.0)) throw DomainError(strfmt("lambda %g must be positive", lambda));
    std::vector<double> s(state.begin(), state.end());
    long d = spec_.act_dim;
    // Subtract the max before exponentiating; the normalizer absorbs it.
    double qmax = 0.0;  // both bandits peak at Q*=0
    auto f = [&](std::span<const double> a) {
        return std::exp((q_star(s, a) - qmax) / lambda);
    };
    return density_from_function(d, kDensityGridNodes, kActLow, kActHigh, f);
}

}  // namespace diffrl
