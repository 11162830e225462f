#include "diffrl/algos.hpp"

#include <cmath>

namespace diffrl {

Proposal proposal_from_name(std::string_view name) {
    if (name == "dataset") return Proposal::dataset;
    if (name == "prev_policy") return Proposal::prev_policy;
    if (name == "uniform_mix") return Proposal::uniform_mix;
    if (name == "reverse_sampling") return Proposal::reverse_sampling;
    throw DomainError(strfmt("unknown proposal '%.*s'", (int)name.size(), name.data()));
}

const char* proposal_name(Proposal p) {
    switch (p) {
        case Proposal::dataset: return "dataset";
        case Proposal::prev_policy: return "prev_policy";
        case Proposal::uniform_mix: return "uniform_mix";
        case Proposal::reverse_sampling: return "reverse_sampling";
    }
    return "?";
}

namespace {

// Forward coupling shared by the dataset / prev_policy / uniform_mix paths:
// given clean actions, pick t ~ U(t_min,1), perturb, and set the conditional
// score as the regression target.
void fill_forward_coupling(const NoiseSchedule& sch, const MatD& a0, double t_min,
                           ScoreRegressionBatch& b, Rng& rng) {
    long n = a0.rows, d = a0.cols;
    b.x_t = MatD(n, d);
    b.target = MatD(n, d);
    b.t.resize(n);
    std::vector<double> noise(d);
    for (long i = 0; i < n; ++i) {
        b.t[i] = rng.uniform(t_min, 1.0);
        rng.fill_normal(noise);
        forward_perturb(sch, a0.row(i), b.t[i], noise, b.x_t.row(i));
        conditional_score(sch, b.x_t.row(i), a0.row(i), b.t[i], b.target.row(i));
    }
}

std::vector<double> batch_q(const QFunction& critic, const MatD& s, const MatD& a) {
    std::vector<double> q(s.rows);
    critic.q_batch(s, a, q);
    return q;
}

}  // namespace

ScoreRegressionBatch build_weighted_batch(const DiffusionPolicy& policy, const DiffusionPolicy* prev_policy,
                                          const QFunction& critic, const MatD& states,
                                          const MatD* dataset_actions, const WeightedMatchingConfig& cfg,
                                          Rng& rng) {
    if (cfg.lambda <= 0.0) throw DomainError(strfmt("weighted matching lambda %g must be > 0", cfg.lambda));
    if (states.rows == 0) throw DomainError("weighted matching: empty state batch");
    const DiffusionPolicy& prev = prev_policy ? *prev_policy : policy;
    const NoiseSchedule& sch = policy.schedule;
    long n = states.rows, d = policy.act_dim();

    ScoreRegressionBatch b;

    switch (cfg.proposal) {
        case Proposal::dataset: {
            if (!dataset_actions || dataset_actions->rows == 0)
                throw DomainError("weighted matching: dataset proposal needs a nonempty action batch");
            if (dataset_actions->rows != n)
                throw DimensionError("dataset actions", n, dataset_actions->rows);
            b.cond = states;
            fill_forward_coupling(sch, *dataset_actions, cfg.t_min, b, rng);
            // One action per state comes with the data, so the weights can only
            // discriminate across the batch.
            b.weight = batch_q(critic, states, *dataset_actions);
            for (double& w : b.weight) w /= cfg.lambda;
            softmax_inplace(b.weight);
            break;
        }

        case Proposal::prev_policy: {
            // K candidates per state from the frozen proposal, weighted within
            // each state's group. Normalizing per state rather than across the
            // whole batch keeps the weights comparing actions, not states —
            // cross-state Q offsets otherwise starve most of the batch.
            long K = std::max<long>(1, cfg.num_train_samples);
            MatD rep(n * K, states.cols);
            for (long i = 0; i < n; ++i)
                for (long k = 0; k < K; ++k) rep.set_row(i * K + k, states.row(i));
            MatD a0 = prev.sample_actions(rep, rng);

            std::vector<double> q = batch_q(critic, rep, a0);
            b.weight.resize(n * K);
            for (long i = 0; i < n; ++i) {
                std::span<double> grp(b.weight.data() + i * K, (size_t)K);
                for (long k = 0; k < K; ++k) grp[k] = q[i * K + k] / cfg.lambda;
                softmax_inplace(grp);
                for (long k = 0; k < K; ++k) grp[k] /= (double)n;
            }
            b.cond = rep;
            fill_forward_coupling(sch, a0, cfg.t_min, b, rng);
            break;
        }

        case Proposal::uniform_mix: {
            long K = cfg.num_train_samples;
            if (K < 1) throw DomainError("uniform_mix needs num_train_samples >= 1");
            long nb = std::min(cfg.num_behavior_samples, K);

            MatD rep(n * K, states.cols);
            for (long i = 0; i < n; ++i)
                for (long k = 0; k < K; ++k) rep.set_row(i * K + k, states.row(i));

            // First nb slots per state come from the behavior policy, the rest
            // are uniform over the action box (the exploration pool).
            MatD cands(n * K, d);
            if (nb > 0) {
                MatD brep(n * nb, states.cols);
                for (long i = 0; i < n; ++i)
                    for (long k = 0; k < nb; ++k) brep.set_row(i * nb + k, states.row(i));
                MatD ba = prev.sample_actions(brep, rng);
                for (long i = 0; i < n; ++i)
                    for (long k = 0; k < nb; ++k) cands.set_row(i * K + k, ba.row(i * nb + k));
            }
            for (long i = 0; i < n; ++i)
                for (long k = nb; k < K; ++k)
                    for (long j = 0; j < d; ++j)
                        cands(i * K + k, j) = rng.uniform(policy.act_low, policy.act_high);

            std::vector<double> q = batch_q(critic, rep, cands);
            // Uniform candidates get a small multiplicative tilt, nudging mass
            // toward unexplored regions (the entropy bonus).
            double tilt = std::log1p(cfg.entropy_coef);
            b.weight.resize(n * K);
            for (long i = 0; i < n; ++i) {
                std::span<double> grp(b.weight.data() + i * K, (size_t)K);
                for (long k = 0; k < K; ++k)
                    grp[k] = q[i * K + k] / cfg.lambda + (k >= nb ? tilt : 0.0);
                softmax_inplace(grp);
                for (long k = 0; k < K; ++k) grp[k] /= (double)n;
            }
            b.cond = rep;
            fill_forward_coupling(sch, cands, cfg.t_min, b, rng);
            break;
        }

        case Proposal::reverse_sampling: {
            long K = cfg.num_reverse_samples;
            if (K < 1) throw DomainError("reverse_sampling needs num_reverse_samples >= 1");

            // a^(t) first: forward-perturb a current-policy draw, so every
            // noise level is covered with the chain's own marginals.
            MatD a0 = policy.sample_actions(states, rng);
            b.cond = states;
            b.x_t = MatD(n, d);
            b.target = MatD(n, d);
            b.t.resize(n);
            std::vector<double> noise(d);

            MatD cands(n * K, d);
            MatD rep(n * K, states.cols);
            for (long i = 0; i < n; ++i) {
                b.t[i] = rng.uniform(cfg.t_min, 1.0);
                rng.fill_normal(noise);
                forward_perturb(sch, a0.row(i), b.t[i], noise, b.x_t.row(i));

                // Invert the perturbation kernel around a^(t). Candidates are
                // clamped into the action box: that is the policy's entire
                // support (uniform reference), and it keeps the inversion sane
                // at high noise where sigma/alpha explodes.
                double al = sch.alpha(b.t[i]), sg = sch.sigma(b.t[i]);
                for (long k = 0; k < K; ++k) {
                    rep.set_row(i * K + k, states.row(i));
                    for (long j = 0; j < d; ++j) {
                        double c = b.x_t(i, j) / al + (sg / al) * rng.normal();
                        cands(i * K + k, j) = clampd(c, policy.act_low, policy.act_high);
                    }
                }
            }

            std::vector<double> q = batch_q(critic, rep, cands);
            std::vector<double> cbar(d);
            for (long i = 0; i < n; ++i) {
                std::span<double> grp(q.data() + i * K, (size_t)K);
                for (double& v : grp) v /= cfg.lambda;
                softmax_inplace(grp);
                // Weighted-mean candidate; the conditional score is linear in
                // the clean sample, so this is the weighted-mean target.
                std::fill(cbar.begin(), cbar.end(), 0.0);
                for (long k = 0; k < K; ++k)
                    for (long j = 0; j < d; ++j) cbar[j] += grp[k] * cands(i * K + k, j);
                conditional_score(sch, b.x_t.row(i), cbar, b.t[i], b.target.row(i));
            }
            break;  // b.weight empty: uniform 1/n over rows
        }
    }
    return b;
}

double weighted_matching_update(DiffusionPolicy& policy, const DiffusionPolicy* prev_policy,
                                const QFunction& critic, const MatD& states, const MatD* dataset_actions,
                                const WeightedMatchingConfig& cfg, Optimizer& opt, Rng& rng) {
    ScoreRegressionBatch b = build_weighted_batch(policy, prev_policy, critic, states, dataset_actions, cfg, rng);
    std::vector<double> grad(policy.field.net.params.size(), 0.0);
    double loss = score_regression_loss(policy.field, policy.schedule, b, grad);
    opt.step(policy.field.net.params, grad);
    return loss;
}

double chain_kl_proxy(const DiffusionPolicy& cur, const DiffusionPolicy& ref, const MatD& states,
                      Rng& rng) {
    if (states.rows == 0) throw DomainError("chain_kl_proxy: empty state batch");
    std::vector<DenoisingTrajectory> chains;
    (void)sample(ref.field, states, ref.schedule, ref.sampler, rng, nullptr, &chains);

    std::vector<ChainMeanStep> cur_means = chain_step_means(cur, chains, states, false);
    long n = (long)chains.size(), d = cur.act_dim();
    long T = chains.front().steps();
    // Zero-variance steps (the final ancestral step) stay in the sum with a
    // floored scale so mean drift there is still penalized. The floor is kept
    // coarse on purpose: with a tight floor the deterministic last step
    // dominates the whole sum and the proxy stops responding to temperature.
    constexpr double kStdFloor = 0.1;

    double acc = 0.0;
    for (long k = 0; k < T; ++k) {
        for (long i = 0; i < n; ++i) {
            double s = std::max(chains[i].stds[k], kStdFloor);
            double q = 0.0;
            for (long j = 0; j < d; ++j) {
                double dm = cur_means[k].mean(i, j) - chains[i].mean(k, j);
                q += dm * dm;
            }
            acc += q / (2.0 * s * s);
        }
    }
    return acc / (double)n;
}

double dpmd_step(DiffusionPolicy& policy, DpmdState& st, const QFunction& critic, const MatD& states,
                 const WeightedMatchingConfig& cfg, Optimizer& opt, Rng& rng) {
    WeightedMatchingConfig c = cfg;
    c.proposal = Proposal::prev_policy;
    c.lambda = st.lambda;
    double loss = weighted_matching_update(policy, &st.ref, critic, states, nullptr, c, opt, rng);

    st.kl_value = chain_kl_proxy(policy, st.ref, states, rng);
    // Hold the proxy inside [target/1.5, target*1.5] by moving the temperature
    // multiplicatively: hotter weights track the reference more closely. The
    // step factor is deliberately mild — the proxy is a noisy one-batch
    // estimate and an aggressive controller just slams between the clamps.
    if (st.kl_value > st.target_kl * 1.5)
        st.lambda = std::min(st.lambda * 1.25, 1e3);
    else if (st.kl_value < st.target_kl / 1.5)
        st.lambda = std::max(st.lambda / 1.25, 1e-3);

    ++st.step_count;
    if (st.refresh_interval > 0 && st.step_count % st.refresh_interval == 0) st.ref = policy;
    return loss;
}

}  // namespace diffrl
