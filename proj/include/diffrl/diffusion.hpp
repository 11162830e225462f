#pragma once

#include <cstdint>
#include <functional>

#include "diffrl/scorefield.hpp"

namespace diffrl {

// x_t = alpha(t)*x0 + sigma(t)*noise
void forward_perturb(const NoiseSchedule& sch, std::span<const double> x0, double t,
                     std::span<const double> noise, std::span<double> out);

// grad_x log q(x_t | x0) = -(x_t - alpha*x0)/sigma^2; singular at t=0.
void conditional_score(const NoiseSchedule& sch, std::span<const double> x_t, std::span<const double> x0,
                       double t, std::span<double> out);

// x0hat = (x_t - sigma*eps_pred)/alpha; throws DomainError when alpha(t) < 1e-6.
std::vector<double> posterior_mean(const NoiseSchedule& sch, std::span<const double> x_t, double t,
                                   std::span<const double> eps_pred);

// One unadjusted Langevin step: x + step*score + sqrt(2*step)*noise.
void langevin_step(std::span<const double> x, std::span<const double> score, double step_size,
                   std::span<const double> noise, std::span<double> out);

struct SamplerConfig {
    enum class Mode { sde, ode, ddpm_ancestral, langevin };

    long num_steps = 20;
    double eta = 1.0;  // SDE stochasticity; ignored by ode/ancestral
    Mode mode = Mode::ddpm_ancestral;
    std::vector<double> time_grid;  // empty = uniform from 1 to 0, length num_steps+1

    double t_min = 1e-3;    // floor for net/schedule evaluation times
    double x0_clip = 1.5;   // ancestral: clamp on the implied x0hat; <=0 disables
    double std_floor = 0.0; // ancestral: per-step std floor (>0 keeps chain log-densities finite)
    long langevin_inner = 5;
    double langevin_scale = 0.1;

    static Mode mode_from_name(std::string_view name);
    const char* mode_name() const;
    std::vector<double> grid() const;  // resolved, validated grid
    void validate() const;
};

// Full chain record for one sample: states x^(t_0)..x^(t_T) (T = num_steps),
// raw model outputs and injected noises per step, and the per-step Gaussian
// transition parameters the step actually used.
struct DenoisingTrajectory {
    std::vector<double> times;  // grid, length T+1
    MatD states;                // (T+1) x d
    MatD model_out;             // T x d
    MatD noise;                 // T x d
    MatD mean;                  // T x d
    std::vector<double> stds;   // T

    long steps() const { return model_out.rows; }
};

// Sum over steps of log N(x_{k+1}; mean_k, std_k^2 I). Throws on std <= 0.
double chain_log_prob(const DenoisingTrajectory& tr);

// The affine transition one sampler step applies (sde/ode/ancestral):
//   x_lo = cx*x_hi + cu*clamp(u*x_hi + w*raw) + cw*raw + std*noise
// cu/u/w drive the ancestral x0hat path; cw the euler path. Exposed so chain
// densities can be re-evaluated under new parameters.
struct StepAffine {
    double cx = 0.0, cu = 0.0, cw = 0.0, u = 0.0, w = 0.0, std = 0.0;
    bool clamp_path = false;
};
StepAffine step_affine(const ScoreField& field, const NoiseSchedule& sch, const SamplerConfig& cfg,
                       double t_hi, double t_lo);

// Extra score injected at each step (guidance). Accumulate into score_add.
using GuidanceFn = std::function<void(double t, const MatD& x, MatD& score_add)>;

// Reverse-process sampler. cond carries the batch size (rows x condition_dim;
// rows x 0 when unconditional). Returns the batch of x^(0) draws; when
// trajectories is non-null it receives one DenoisingTrajectory per row.
MatD sample(const ScoreField& field, const MatD& cond, const NoiseSchedule& sch, const SamplerConfig& cfg,
            Rng& rng, const GuidanceFn* guidance = nullptr,
            std::vector<DenoisingTrajectory>* trajectories = nullptr);

// ---- differentiable chain (reparameterized sampling) ----
//
// Every sde/ode/ancestral step is affine in (x_hi, raw_out) given the noise:
//   x_lo = cx*x_hi + cu*g(x0hat) + cw_raw... collapsed to per-step scalars
//   x_lo = cx*x_hi + cu*m(x0hat_pre) + cw*raw + std*noise
// where m is the x0hat clamp (identity off the clamp boundary). The tape
// stores the scalars, the clamp mask, and the net tape, which is all reverse
// mode needs.
struct ChainStep {
    double t_eval = 0.0;
    double cx = 0.0;  // direct x_hi coefficient
    double cu = 0.0;  // coefficient on the (possibly clamped) x0hat path
    double cw = 0.0;  // raw-output coefficient on the non-clamped path (euler modes)
    double u = 0.0, w = 0.0;  // x0hat = u*x_hi + w*raw (ancestral only)
    std::vector<uint8_t> clipped;  // n*d, 1 where x0hat clamp was active; empty if unused
    NetTape tape;
};

struct ChainResult {
    MatD x0;
    std::vector<ChainStep> steps;
};

// Like sample() but records the differentiable tape. langevin mode is not
// differentiable and is rejected.
ChainResult sample_chain_taped(const ScoreField& field, const MatD& cond, const NoiseSchedule& sch,
                               const SamplerConfig& cfg, Rng& rng);

// Accumulates d(objective)/d(params) into param_grad given dX0 = d(objective)/d(x0).
void chain_backward(const ScoreField& field, const ChainResult& chain, const MatD& dX0,
                    std::span<double> param_grad);

// ---- training losses ----

// Generic weighted score regression: sum_i w_i * ||score_theta(x_i,t_i,c_i) - target_i||^2.
// Empty weight vector means uniform 1/n. Gradients accumulate into param_grad.
struct ScoreRegressionBatch {
    MatD x_t;
    MatD cond;
    std::vector<double> t;
    MatD target;                 // score-space targets
    std::vector<double> weight;  // empty = uniform mean
};

double score_regression_loss(const ScoreField& field, const NoiseSchedule& sch,
                             const ScoreRegressionBatch& batch, std::span<double> param_grad);

// Conditional score matching on clean samples: per item t ~ U[t_min, 1],
// noise ~ N(0,I), target = the conditional score identity. Returns the loss;
// gradient accumulates into param_grad.
double score_matching_loss(const ScoreField& field, const NoiseSchedule& sch, const MatD& x0,
                           const MatD& cond, double t_min, Rng& rng, std::span<double> param_grad);

// The batch builder behind score_matching_loss, exposed so callers can fix
// the randomness (finite-difference checks) or reweight items.
ScoreRegressionBatch build_score_matching_batch(const NoiseSchedule& sch, const MatD& x0, const MatD& cond,
                                                double t_min, Rng& rng);

}  // namespace diffrl
