#include "diffrl/policy.hpp"

#include <cmath>

namespace diffrl {

DiffusionPolicy DiffusionPolicy::make(long obs_dim, long act_dim, const std::vector<long>& hidden,
                                      Activation act, Head head, long embed_dim, const NoiseSchedule& sch,
                                      const SamplerConfig& sampler, Rng& rng) {
    DiffusionPolicy p;
    p.field = ScoreField::make(act_dim, obs_dim, hidden, act, head, embed_dim, rng);
    p.schedule = sch;
    p.sampler = sampler;
    p.sampler.validate();
    return p;
}

MatD DiffusionPolicy::sample_actions(const MatD& states, Rng& rng, std::vector<DenoisingTrajectory>* traj,
                                     const GuidanceFn* guidance) const {
    MatD a = sample(field, states, schedule, sampler, rng, guidance, traj);
    for (double& v : a.data) v = clampd(v, act_low, act_high);
    return a;
}

std::vector<double> DiffusionPolicy::act(std::span<const double> state, Rng& rng) const {
    MatD s(1, (long)state.size());
    s.set_row(0, state);
    MatD a = sample_actions(s, rng);
    return std::vector<double>(a.data.begin(), a.data.end());
}

GaussianPolicy GaussianPolicy::make(long obs_dim, long act_dim, const std::vector<long>& hidden,
                                    Activation act, bool tanh_squash, Rng& rng) {
    GaussianPolicy p;
    std::vector<long> widths;
    widths.push_back(obs_dim);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(2 * act_dim);
    p.net = DenseNet::make(widths, act, rng);
    p.act_dim = act_dim;
    p.tanh_squash = tanh_squash;
    return p;
}

GaussianPolicy::HeadOut GaussianPolicy::heads(std::span<const double> state) const {
    std::vector<double> out = net.forward1(state);
    HeadOut h;
    h.mean.assign(out.begin(), out.begin() + act_dim);
    h.log_std.assign(out.begin() + act_dim, out.end());
    for (double& v : h.log_std) v = clampd(v, log_std_min, log_std_max);
    return h;
}

GaussianPolicy::ActionSample GaussianPolicy::sample(std::span<const double> state, Rng& rng) const {
    HeadOut h = heads(state);
    ActionSample s;
    s.pre.resize(act_dim);
    for (long i = 0; i < act_dim; ++i) s.pre[i] = h.mean[i] + std::exp(h.log_std[i]) * rng.normal();
    s.log_prob = gaussian_log_prob(s.pre, h.mean, h.log_std);
    if (tanh_squash) {
        s.action.resize(act_dim);
        for (long i = 0; i < act_dim; ++i) s.action[i] = std::tanh(s.pre[i]);
        s.log_prob -= tanh_squash_log_det(s.pre);
    } else {
        s.action = s.pre;
    }
    return s;
}

double GaussianPolicy::log_prob_pre(std::span<const double> state, std::span<const double> pre) const {
    HeadOut h = heads(state);
    double lp = gaussian_log_prob(pre, h.mean, h.log_std);
    if (tanh_squash) lp -= tanh_squash_log_det(pre);
    return lp;
}

std::vector<double> GaussianPolicy::mean_action(std::span<const double> state) const {
    HeadOut h = heads(state);
    if (tanh_squash)
        for (double& v : h.mean) v = std::tanh(v);
    return h.mean;
}

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std) {
    if (x.size() != mean.size() || x.size() != log_std.size())
        throw DimensionError("gaussian_log_prob", (long)x.size(), (long)mean.size());
    constexpr double kLog2Pi = 1.8378770664093454836;
    double lp = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
        lp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
    }
    return lp;
}

double tanh_squash_log_det(std::span<const double> pre) {
    // log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)); exact and stable
    // for large |u| where the naive form underflows to log(0).
    constexpr double kLog2 = 0.6931471805599453094;
    double s = 0.0;
    for (double u : pre) {
        // softplus(-2u): log1p(exp(-2u)) for u >= 0, else -2u + log1p(exp(2u)).
        double sp = u >= 0.0 ? std::log1p(std::exp(-2.0 * u)) : -2.0 * u + std::log1p(std::exp(2.0 * u));
        s += 2.0 * (kLog2 - u - sp);
    }
    return s;
}

}  // namespace diffrl
