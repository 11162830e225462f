#include "diffrl/algos.hpp"

#include <cmath>

namespace diffrl {

std::vector<double> bon_select(const DiffusionPolicy& policy, const QFunction& critic,
                               std::span<const double> state, long N, Rng& rng) {
    if (N < 1) throw DomainError(strfmt("bon_select: N=%ld must be >= 1", N));
    long sd = (long)state.size();
    if (sd != policy.obs_dim()) throw DimensionError("bon_select state", policy.obs_dim(), sd);

    MatD states(N, sd);
    for (long i = 0; i < N; ++i) states.set_row(i, state);
    MatD actions = policy.sample_actions(states, rng);

    std::vector<double> qs(N);
    critic.q_batch(states, actions, qs);
    long best = 0;
    for (long i = 1; i < N; ++i)
        if (qs[i] > qs[best]) best = i;  // strict: ties keep the earliest draw
    auto r = actions.row(best);
    return std::vector<double>(r.begin(), r.end());
}

ScoreRegressionBatch build_qsm_batch(const DiffusionPolicy& policy, const QFunction& critic,
                                     const MatD& states, const QsmConfig& cfg, Rng& rng) {
    if (cfg.lambda <= 0.0) throw DomainError(strfmt("qsm lambda %g must be > 0", cfg.lambda));
    if (cfg.num_samples < 1) throw DomainError("qsm num_samples must be >= 1");
    long n = states.rows, d = policy.act_dim(), m = cfg.num_samples;

    MatD rep(n * m, states.cols);
    for (long i = 0; i < n; ++i)
        for (long k = 0; k < m; ++k) rep.set_row(i * m + k, states.row(i));

    MatD actions = policy.sample_actions(rep, rng);
    MatD grads(n * m, d);
    critic.grad_a_batch(rep, actions, grads);

    ScoreRegressionBatch b;
    b.cond = rep;
    b.x_t = MatD(n * m, d);
    b.target = MatD(n * m, d);
    b.t.resize(n * m);
    std::vector<double> noise(d);
    for (long r = 0; r < n * m; ++r) {
        b.t[r] = rng.uniform(cfg.t_min, 1.0);
        rng.fill_normal(noise);
        forward_perturb(policy.schedule, actions.row(r), b.t[r], noise, b.x_t.row(r));
        // Target is the action-gradient field at the clean sample, tempered.
        for (long j = 0; j < d; ++j) b.target(r, j) = grads(r, j) / cfg.lambda;
    }
    return b;
}

double qsm_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                  const QsmConfig& cfg, Optimizer& opt, Rng& rng) {
    ScoreRegressionBatch b = build_qsm_batch(policy, critic, states, cfg, rng);
    std::vector<double> grad(policy.field.net.params.size(), 0.0);
    double loss = score_regression_loss(policy.field, policy.schedule, b, grad);
    opt.step(policy.field.net.params, grad);
    return loss;
}

std::vector<double> idem_intermediate_score(const QFunction& critic, std::span<const double> state,
                                            std::span<const double> a_t, double t,
                                            const NoiseSchedule& sch, long K, double lambda, Rng& rng) {
    if (K < 1) throw DomainError(strfmt("idem K=%ld must be >= 1", K));
    if (lambda <= 0.0) throw DomainError(strfmt("idem lambda %g must be > 0", lambda));
    long d = (long)a_t.size();
    double a = sch.alpha(t), s = sch.sigma(t);
    if (a < 1e-6) throw DomainError(strfmt("idem: alpha(%g)=%g too small to invert the kernel", t, a));

    // Kernel inversion: a0hat ~ N(a_t/alpha, (sigma/alpha)^2 I).
    MatD cands(K, d);
    for (long k = 0; k < K; ++k)
        for (long j = 0; j < d; ++j) cands(k, j) = a_t[j] / a + (s / a) * rng.normal();

    std::vector<double> logits(K);
    for (long k = 0; k < K; ++k) logits[k] = critic.q(state, cands.row(k)) / lambda;
    double mx = *std::max_element(logits.begin(), logits.end());
    if (!std::isfinite(mx))
        throw DomainError(strfmt("idem: all importance weights underflowed; increase lambda (%g)", lambda));
    softmax_inplace(logits);

    std::vector<double> out(d, 0.0), g(d);
    for (long k = 0; k < K; ++k) {
        critic.grad_a(state, cands.row(k), g);
        for (long j = 0; j < d; ++j) out[j] += logits[k] * g[j];
    }
    return out;
}

}  // namespace diffrl
