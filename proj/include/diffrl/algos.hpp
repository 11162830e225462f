#pragma once

#include "diffrl/critic.hpp"
#include "diffrl/policy.hpp"
#include "diffrl/rollout.hpp"

// One training/selection operation per guidance family, plus the Gaussian
// baselines. Everything here is a pure function of (policy, critic, batch,
// optimizer, rng) — ownership, scheduling, and replay plumbing live in the
// agents.

namespace diffrl {

// ---------------------------------------------------------------------------
// Best-of-N selection (inference-time guidance).
// Draws N actions for one state, scores them with the critic's min-ensemble
// Q, returns the argmax. Ties break toward the lowest sample index.
std::vector<double> bon_select(const DiffusionPolicy& policy, const QFunction& critic,
                               std::span<const double> state, long N, Rng& rng);

// ---------------------------------------------------------------------------
// Q-score matching: regress the field toward grad_a Q(s,a)/lambda, evaluated
// at fresh policy samples, at randomly perturbed noise levels.
struct QsmConfig {
    double lambda = 0.1;
    long num_samples = 10;
    double t_min = 1e-3;
};

ScoreRegressionBatch build_qsm_batch(const DiffusionPolicy& policy, const QFunction& critic,
                                     const MatD& states, const QsmConfig& cfg, Rng& rng);
double qsm_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                  const QsmConfig& cfg, Optimizer& opt, Rng& rng);

// Self-normalized importance estimate of the intermediate guidance score:
// softmax(Q/lambda)-weighted mean of grad_a Q over K kernel inversions of a_t.
// Throws DomainError when every weight underflows (raise lambda).
std::vector<double> idem_intermediate_score(const QFunction& critic, std::span<const double> state,
                                            std::span<const double> a_t, double t,
                                            const NoiseSchedule& sch, long K, double lambda, Rng& rng);

// ---------------------------------------------------------------------------
// Weighted score matching: exp(Q/lambda)-weighted regression onto conditional
// scores, with the four proposal couplings.
enum class Proposal { dataset, prev_policy, uniform_mix, reverse_sampling };
Proposal proposal_from_name(std::string_view name);
const char* proposal_name(Proposal p);

struct WeightedMatchingConfig {
    Proposal proposal = Proposal::prev_policy;
    double lambda = 0.05;
    long num_reverse_samples = 500;  // kernel candidates per a_t (reverse_sampling)
    long num_train_samples = 64;     // candidates per state (uniform_mix)
    long num_behavior_samples = 2;   // policy draws inside the uniform_mix pool
    double entropy_coef = 0.01;      // uniform-candidate tilt (uniform_mix)
    double t_min = 1e-3;
};

// dataset_actions supplies a^(0) for the dataset proposal (ignored otherwise);
// prev_policy supplies draws for prev_policy/uniform_mix (null = use `policy`).
ScoreRegressionBatch build_weighted_batch(const DiffusionPolicy& policy, const DiffusionPolicy* prev_policy,
                                          const QFunction& critic, const MatD& states,
                                          const MatD* dataset_actions, const WeightedMatchingConfig& cfg,
                                          Rng& rng);
double weighted_matching_update(DiffusionPolicy& policy, const DiffusionPolicy* prev_policy,
                                const QFunction& critic, const MatD& states, const MatD* dataset_actions,
                                const WeightedMatchingConfig& cfg, Optimizer& opt, Rng& rng);

// Monte Carlo chain-KL surrogate between two policies sharing one sampler
// config: reference chains are drawn, and per step the squared difference of
// the two predicted transition means is accumulated, scaled by the step
// variance. Zero iff the fields agree along the reference chains.
double chain_kl_proxy(const DiffusionPolicy& cur, const DiffusionPolicy& ref, const MatD& states,
                      Rng& rng);

// Mirror-descent loop state: frozen reference, adaptive temperature.
struct DpmdState {
    DiffusionPolicy ref;
    double lambda = 0.05;
    double target_kl = 2.5;
    long refresh_interval = 1000;
    long step_count = 0;
    double kl_value = 0.0;  // proxy measured at the last step
};

// One weighted-matching update against the frozen reference, then KL-proxy
// measurement, multiplicative lambda adaptation, and (on schedule) reference
// refresh. Returns the matching loss.
double dpmd_step(DiffusionPolicy& policy, DpmdState& st, const QFunction& critic, const MatD& states,
                 const WeightedMatchingConfig& cfg, Optimizer& opt, Rng& rng);

// ---------------------------------------------------------------------------
// Reparameterized chain backprop: maximize mean Q(s, a0_theta) through every
// denoising step. The _grad form takes rng BY VALUE so a caller can replay the
// exact same chain (finite differences).
double reparam_bptt_grad(const DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                         Rng rng, std::span<double> param_grad);
double reparam_bptt_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                           Optimizer& opt, Rng& rng);

// Single-step surrogate: perturb dataset actions, maximize Q at the implied
// x0hat. bc_weight adds a score-matching anchor on the same batch.
double edp_grad(const DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                const MatD& actions, double bc_weight, Rng rng, std::span<double> param_grad);
double edp_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                  const MatD& actions, double bc_weight, Optimizer& opt, Rng& rng);

// Plug-in differential entropy: fit a diagonal Gaussian mixture by EM, return
// -mean log density over the sample set.
double gmm_entropy_estimate(const MatD& samples, long components, long em_iters, Rng& rng);

// Multiplicative dual ascent on the entropy temperature: alpha grows when the
// entropy estimate sits below target, shrinks above.
double dacer_alpha_step(double alpha, double entropy_estimate, double target_entropy, double alpha_lr);

// ---------------------------------------------------------------------------
// SAC (Gaussian baseline).
struct SacState {
    double log_alpha = 0.0;
    double target_entropy = -1.0;
    double alpha_lr = 3e-4;

    double alpha() const;
};

struct SacLosses {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double mean_log_prob = 0.0;
    double alpha = 0.0;
};

double sac_critic_update(const GaussianPolicy& policy, CriticEnsemble& critics,
                         const ReplayBuffer::Batch& batch, double alpha, double gamma, Rng& rng);
SacLosses sac_actor_update(GaussianPolicy& policy, const CriticEnsemble& critics, const MatD& states,
                           SacState& st, Optimizer& opt, Rng& rng);
SacLosses sac_update(GaussianPolicy& policy, CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                     SacState& st, double gamma, Optimizer& actor_opt, Rng& rng);

// ---------------------------------------------------------------------------
// PPO (Gaussian baseline, exact log-probs, no squashing).
struct PpoConfig {
    double clip_eps = 0.2;
    long epochs = 4;
    long minibatches = 4;
    double entropy_coef = 1e-4;
    bool normalize_adv = true;
};

struct PgStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double mean_ratio = 0.0;
};

// value_net maps state -> scalar V. The rollout must have advantages computed.
PgStats ppo_update(GaussianPolicy& policy, DenseNet& value_net, const RolloutBuffer& rollout,
                   const PpoConfig& cfg, Optimizer& pi_opt, Optimizer& v_opt, Rng& rng);

// Squared-error value fit on one batch; returns the loss before the step.
double value_update(DenseNet& value_net, const MatD& states, std::span<const double> targets,
                    Optimizer& opt);

// ---------------------------------------------------------------------------
// DPPO: PPO over the denoising MDP. Each env action carries its recorded
// chain; the env-level advantage is broadcast to every denoising step.
struct DppoConfig {
    double clip_eps = 0.2;
    long epochs = 4;
    long minibatches = 4;
    bool normalize_adv = true;
};

// Per-step transition means of recorded chains, recomputed under the current
// field parameters with arithmetic mirroring the sampler (bitwise-identical
// at unchanged parameters). All chains must share one time grid.
struct ChainMeanStep {
    MatD mean;                     // n x d
    double dmean_draw = 0.0;       // scalar d(mean)/d(raw output), pre-mask
    std::vector<uint8_t> clamped;  // n*d, 1 where the x0hat clamp froze the path
    NetTape tape;                  // filled when with_tape
};
std::vector<ChainMeanStep> chain_step_means(const DiffusionPolicy& policy,
                                            const std::vector<DenoisingTrajectory>& chains,
                                            const MatD& states, bool with_tape);

// Joint Gaussian chain log densities of recorded trajectories under the
// CURRENT field parameters (stored stds, recomputed means).
std::vector<double> dppo_chain_log_probs(const DiffusionPolicy& policy,
                                         const std::vector<DenoisingTrajectory>& chains,
                                         const MatD& states);

PgStats dppo_update(DiffusionPolicy& policy, const std::vector<DenoisingTrajectory>& chains,
                    const MatD& states, std::span<const double> advantages, const DppoConfig& cfg,
                    Optimizer& opt, Rng& rng);

// ---------------------------------------------------------------------------
// FPO: ratio from matched-sample denoising-loss differences,
// r = exp(L_old - L_new) with common (t, noise) draws.
struct FpoConfig {
    double clip_eps = 0.05;
    long num_mc = 8;
    double logr_clamp = 5.0;   // |log r| guard before the surrogate
    bool clamp_enabled = true; // off reproduces the unbounded collapse
    long epochs = 4;
    long minibatches = 4;
    bool normalize_adv = true;
    double t_min = 1e-3;
};

struct FpoDraws {
    MatD t;                       // n x M perturbation times
    MatD eps;                     // n x (M*act_dim) noises
    std::vector<double> loss_old; // per-action mean denoising loss at theta_old
};

// Draw the common random numbers and record the current-parameter losses.
FpoDraws fpo_make_draws(const DiffusionPolicy& policy, const MatD& states, const MatD& actions,
                        long num_mc, double t_min, Rng& rng);

// Per-action denoising losses under current params, reusing the stored draws
// (epsilon-space squared error, averaged over the M draws).
std::vector<double> fpo_cfm_losses(const DiffusionPolicy& policy, const MatD& states,
                                   const MatD& actions, const FpoDraws& draws);

PgStats fpo_update(DiffusionPolicy& policy, const MatD& states, const MatD& actions,
                   std::span<const double> advantages, const FpoDraws& draws, const FpoConfig& cfg,
                   Optimizer& opt, Rng& rng);

}  // namespace diffrl
