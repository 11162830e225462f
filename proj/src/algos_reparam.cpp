#include "diffrl/algos.hpp"

#include <cmath>

namespace diffrl {

double reparam_bptt_grad(const DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                         Rng rng, std::span<double> param_grad) {
    if (states.rows == 0) throw DomainError("reparam_bptt: empty state batch");
    ChainResult chain = sample_chain_taped(policy.field, states, policy.schedule, policy.sampler, rng);
    long n = states.rows;

    // Q is evaluated at the raw chain output (no action clip) so the pathwise
    // gradient never dies at the box boundary; execution-time actions are
    // still clipped by the policy.
    std::vector<double> q(n);
    critic.q_batch(states, chain.x0, q);
    double loss = -mean_of(q);

    MatD dX0(n, policy.act_dim());
    critic.grad_a_batch(states, chain.x0, dX0);
    double scale = -1.0 / (double)n;
    for (double& v : dX0.data) v *= scale;
    chain_backward(policy.field, chain, dX0, param_grad);
    return loss;
}

double reparam_bptt_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                           Optimizer& opt, Rng& rng) {
    std::vector<double> grad(policy.field.net.params.size(), 0.0);
    Rng chain_rng = rng.split("bptt_chain", rng.next_u64());
    double loss = reparam_bptt_grad(policy, critic, states, chain_rng, grad);
    opt.step(policy.field.net.params, grad);
    return loss;
}

double edp_grad(const DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                const MatD& actions, double bc_weight, Rng rng, std::span<double> param_grad) {
    if (states.rows == 0) throw DomainError("edp: empty batch");
    if (actions.rows != states.rows) throw DimensionError("edp actions", states.rows, actions.rows);
    const NoiseSchedule& sch = policy.schedule;
    long n = states.rows, d = policy.act_dim();

    std::vector<double> t(n);
    MatD x_t(n, d), eps(n, d);
    for (long i = 0; i < n; ++i) {
        t[i] = rng.uniform(policy.sampler.t_min, 1.0);
        rng.fill_normal(eps.row(i));
        forward_perturb(sch, actions.row(i), t[i], eps.row(i), x_t.row(i));
    }

    NetTape tape;
    MatD raw = policy.field.raw(x_t, t, states, &tape);

    // Single-step surrogate: x0hat = (x_t + sigma^2 * score)/alpha, clamped
    // like the sampler's x0hat path.
    double clip = policy.sampler.x0_clip;
    MatD x0hat(n, d), score(n, d);
    std::vector<uint8_t> mask((size_t)n * d, 0);
    std::vector<double> As(n), dscale(n);
    for (long i = 0; i < n; ++i) {
        ScoreCoeffs c = score_coeffs(policy.field.head, sch, t[i]);
        double al = sch.alpha(t[i]), sg = sch.sigma(t[i]);
        As[i] = c.A;
        dscale[i] = sg * sg / al;
        for (long j = 0; j < d; ++j) {
            score(i, j) = c.A * raw(i, j) + c.B * x_t(i, j);
            double v = (x_t(i, j) + sg * sg * score(i, j)) / al;
            if (clip > 0.0 && (v < -clip || v > clip)) {
                mask[(size_t)i * d + j] = 1;
                v = clampd(v, -clip, clip);
            }
            x0hat(i, j) = v;
        }
    }

    std::vector<double> q(n);
    critic.q_batch(states, x0hat, q);
    double loss = -mean_of(q);

    MatD gq(n, d);
    critic.grad_a_batch(states, x0hat, gq);

    MatD dRaw(n, d);
    double inv_n = 1.0 / (double)n;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            double g = mask[(size_t)i * d + j] ? 0.0 : -inv_n * gq(i, j) * dscale[i];
            dRaw(i, j) = g * As[i];
        }

    if (bc_weight > 0.0) {
        // Score-matching anchor on the batch actions, reusing the same draws.
        double bc = 0.0;
        std::vector<double> tgt(d);
        for (long i = 0; i < n; ++i) {
            conditional_score(sch, x_t.row(i), actions.row(i), t[i], tgt);
            for (long j = 0; j < d; ++j) {
                double e = score(i, j) - tgt[j];
                bc += e * e;
                dRaw(i, j) += bc_weight * 2.0 * inv_n * e * As[i];
            }
        }
        loss += bc_weight * bc * inv_n;
    }

    net_backward(policy.field.net, tape, dRaw, param_grad);
    return loss;
}

double edp_update(DiffusionPolicy& policy, const QFunction& critic, const MatD& states,
                  const MatD& actions, double bc_weight, Optimizer& opt, Rng& rng) {
    std::vector<double> grad(policy.field.net.params.size(), 0.0);
    Rng draw_rng = rng.split("edp_draws", rng.next_u64());
    double loss = edp_grad(policy, critic, states, actions, bc_weight, draw_rng, grad);
    opt.step(policy.field.net.params, grad);
    return loss;
}

double gmm_entropy_estimate(const MatD& samples, long components, long em_iters, Rng& rng) {
    long n = samples.rows, d = samples.cols;
    if (n < 2) throw DomainError("gmm_entropy_estimate needs at least 2 samples");
    long C = std::max(1L, std::min(components, n));
    constexpr double kVarFloor = 1e-6;
    constexpr double kLog2Pi = 1.8378770664093454836;

    // Init: random distinct-ish sample means, shared global variance.
    MatD mu(C, d), var(C, d);
    std::vector<double> w(C, 1.0 / (double)C);
    std::vector<double> gvar(d, 0.0), gmean(d, 0.0);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) gmean[j] += samples(i, j) / (double)n;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            double c = samples(i, j) - gmean[j];
            gvar[j] += c * c / (double)n;
        }
    for (long c = 0; c < C; ++c) {
        mu.set_row(c, samples.row((long)rng.uniform_index((uint64_t)n)));
        for (long j = 0; j < d; ++j) var(c, j) = std::max(gvar[j], kVarFloor);
    }

    MatD resp(n, C);
    std::vector<double> logp_row(C);
    auto component_logp = [&](long i, long c) {
        double lp = std::log(w[c]);
        for (long j = 0; j < d; ++j) {
            double v = var(c, j);
            double z = samples(i, j) - mu(c, j);
            lp += -0.5 * (z * z / v + std::log(v) + kLog2Pi);
        }
        return lp;
    };

    for (long it = 0; it < em_iters; ++it) {
        // E-step
        for (long i = 0; i < n; ++i) {
            for (long c = 0; c < C; ++c) logp_row[c] = component_logp(i, c);
            softmax_inplace(logp_row);
            for (long c = 0; c < C; ++c) resp(i, c) = logp_row[c];
        }
        // M-step
        for (long c = 0; c < C; ++c) {
            double nc = 0.0;
            for (long i = 0; i < n; ++i) nc += resp(i, c);
            if (nc < 1e-9) {  // dead component: re-seed it
                mu.set_row(c, samples.row((long)rng.uniform_index((uint64_t)n)));
                for (long j = 0; j < d; ++j) var(c, j) = std::max(gvar[j], kVarFloor);
                w[c] = 1.0 / (double)n;
                continue;
            }
            w[c] = nc / (double)n;
            for (long j = 0; j < d; ++j) {
                double m = 0.0;
                for (long i = 0; i < n; ++i) m += resp(i, c) * samples(i, j);
                m /= nc;
                double v = 0.0;
                for (long i = 0; i < n; ++i) {
                    double z = samples(i, j) - m;
                    v += resp(i, c) * z * z;
                }
                mu(c, j) = m;
                var(c, j) = std::max(v / nc, kVarFloor);
            }
        }
        double ws = std::accumulate(w.begin(), w.end(), 0.0);
        for (double& x : w) x /= ws;
    }

    // Plug-in entropy: cross-entropy of the fit against the sample cloud.
    double h = 0.0;
    for (long i = 0; i < n; ++i) {
        for (long c = 0; c < C; ++c) logp_row[c] = component_logp(i, c);
        h -= logsumexp(logp_row);
    }
    return h / (double)n;
}

double dacer_alpha_step(double alpha, double entropy_estimate, double target_entropy, double alpha_lr) {
    if (alpha <= 0.0) throw DomainError(strfmt("alpha %g must be positive", alpha));
    // Multiplicative dual ascent: entropy short of target -> hotter.
    double next = alpha * std::exp(-alpha_lr * (entropy_estimate - target_entropy));
    return clampd(next, 1e-6, 1e6);
}

}  // namespace diffrl
