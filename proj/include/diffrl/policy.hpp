#pragma once

#include "diffrl/diffusion.hpp"

namespace diffrl {

// The temperature / proposal / budget knobs shared by the guidance families.
struct GuidanceConfig {
    enum class Family { bon, qvalue, weighted, reparam, pg };
    enum class Reference { uniform, prev_policy, dataset };

    Family family = Family::weighted;
    double lambda = 0.1;
    Reference reference = Reference::uniform;
    long num_samples = 10;
    long num_reverse_samples = 500;
    long num_mc_samples = 8;
    double clip_eps = 0.2;
    double target_kl = 2.5;
    long ref_refresh_interval = 1000;

    void validate() const {
        if (!(lambda > 0.0)) throw DomainError(strfmt("lambda %g must be positive", lambda));
        if (num_samples < 1 || num_reverse_samples < 1 || num_mc_samples < 1)
            throw DomainError("guidance sample counts must be >= 1");
        if (clip_eps <= 0.0) throw DomainError("clip_eps must be positive");
        if (ref_refresh_interval < 1) throw DomainError("ref_refresh_interval must be >= 1");
    }
};

// State-conditioned reverse-process policy. Actions are the x^(0) samples,
// clipped into the action box at the very end (intermediates unclipped).
struct DiffusionPolicy {
    ScoreField field;
    NoiseSchedule schedule = NoiseSchedule::cosine();
    SamplerConfig sampler;
    double act_low = -1.0, act_high = 1.0;

    static DiffusionPolicy make(long obs_dim, long act_dim, const std::vector<long>& hidden, Activation act,
                                Head head, long embed_dim, const NoiseSchedule& sch,
                                const SamplerConfig& sampler, Rng& rng);

    long obs_dim() const { return field.condition_dim; }
    long act_dim() const { return field.sample_dim; }

    MatD sample_actions(const MatD& states, Rng& rng, std::vector<DenoisingTrajectory>* traj = nullptr,
                        const GuidanceFn* guidance = nullptr) const;
    std::vector<double> act(std::span<const double> state, Rng& rng) const;
};

// Gaussian baseline actor: net emits [mean | log_std]. With tanh squashing
// the emitted action is tanh(pre); log-probs carry the change-of-variables
// correction.
struct GaussianPolicy {
    DenseNet net;
    long act_dim = 0;
    bool tanh_squash = true;
    double log_std_min = -20.0, log_std_max = 2.0;

    static GaussianPolicy make(long obs_dim, long act_dim, const std::vector<long>& hidden, Activation act,
                               bool tanh_squash, Rng& rng);

    struct HeadOut {
        std::vector<double> mean, log_std;  // log_std already clamped
    };
    HeadOut heads(std::span<const double> state) const;

    struct ActionSample {
        std::vector<double> action;  // squashed if tanh_squash
        std::vector<double> pre;     // pre-squash draw
        double log_prob = 0.0;
    };
    ActionSample sample(std::span<const double> state, Rng& rng) const;

    // log pi(action) where `pre` is the pre-squash value (equals the action
    // when not squashing).
    double log_prob_pre(std::span<const double> state, std::span<const double> pre) const;
    std::vector<double> mean_action(std::span<const double> state) const;
};

// Diagonal Gaussian log density.
double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std);
// Sum_i log(1 - tanh(pre_i)^2), evaluated stably.
double tanh_squash_log_det(std::span<const double> pre);

}  // namespace diffrl
