#include "diffrl/algos.hpp"

#include <cmath>
#include <numeric>

namespace diffrl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void shuffle_indices(std::vector<long>& idx, Rng& rng) {
    for (long i = (long)idx.size() - 1; i > 0; --i) {
        long j = (long)rng.uniform_index((uint64_t)(i + 1));
        std::swap(idx[i], idx[j]);
    }
}

std::vector<double> normalized_advantages(std::span<const double> adv, bool enabled) {
    std::vector<double> out(adv.begin(), adv.end());
    if (!enabled || out.size() < 2) return out;
    double m = mean_of(out);
    double var = 0.0;
    for (double a : out) var += (a - m) * (a - m);
    double sd = std::sqrt(var / (double)out.size());
    for (double& a : out) a = (a - m) / (sd + 1e-8);
    return out;
}

// Gradient of the clipped surrogate flows only while the ratio is on the
// active side of the clip corridor.
bool ratio_active(double r, double adv, double clip_eps) {
    if (adv > 0.0) return r <= 1.0 + clip_eps;
    if (adv < 0.0) return r >= 1.0 - clip_eps;
    return false;
}

double clipped_surrogate(double r, double adv, double clip_eps) {
    double c = clampd(r, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(r * adv, c * adv);
}

}  // namespace

// ---------------------------------------------------------------------------
// chain re-evaluation

std::vector<ChainMeanStep> chain_step_means(const DiffusionPolicy& policy,
                                            const std::vector<DenoisingTrajectory>& chains,
                                            const MatD& states, bool with_tape) {
    if (chains.empty()) throw DomainError("chain_step_means: no chains");
    if (policy.sampler.mode == SamplerConfig::Mode::langevin)
        throw DomainError("langevin chains cannot be re-evaluated");
    long n = (long)chains.size(), d = policy.act_dim();
    if (states.rows != n) throw DimensionError("chain_step_means states", n, states.rows);
    const NoiseSchedule& sch = policy.schedule;
    const SamplerConfig& cfg = policy.sampler;
    const std::vector<double>& times = chains.front().times;
    long T = (long)times.size() - 1;
    for (const auto& c : chains)
        if (c.times != times) throw DomainError("chain_step_means: chains must share one time grid");

    bool ancestral = cfg.mode == SamplerConfig::Mode::ddpm_ancestral;
    std::vector<ChainMeanStep> out(T);
    MatD x(n, d);
    std::vector<double> tvec(n);

    // NOTE: the per-element arithmetic below mirrors the sampler expression
    // for expression, so re-evaluating at unchanged parameters reproduces the
    // stored means bit for bit (ratio tests rely on this).
    for (long k = 0; k < T; ++k) {
        double t_hi = times[k], t_lo = times[k + 1];
        double t_e = clampd(t_hi, cfg.t_min, 1.0);
        for (long i = 0; i < n; ++i) x.set_row(i, chains[i].states.row(k));
        std::fill(tvec.begin(), tvec.end(), t_e);

        ChainMeanStep& st = out[k];
        MatD raw = policy.field.raw(x, tvec, states, with_tape ? &st.tape : nullptr);
        ScoreCoeffs c = score_coeffs(policy.field.head, sch, t_e);
        StepAffine sa = step_affine(policy.field, sch, cfg, t_hi, t_lo);

        double ah = sch.alpha(t_e), sh = sch.sigma(t_e);
        double dt = t_lo - t_hi;
        double f = 0.0, kdrift = 0.0;
        if (!ancestral) {
            f = sch.alpha_dot(t_e) / ah;
            double g2 = 2.0 * (sh * sch.sigma_dot(t_e) - sh * sh * f);
            kdrift = g2 / 2.0 + (cfg.mode == SamplerConfig::Mode::ode ? 0.0 : cfg.eta);
        }

        st.mean = MatD(n, d);
        if (ancestral) {
            st.clamped.assign((size_t)n * d, 0);
            st.dmean_draw = sa.cu * (sh * sh * c.A / ah);
        } else {
            st.dmean_draw = -dt * kdrift * c.A;
        }

        for (long i = 0; i < n; ++i) {
            for (long j = 0; j < d; ++j) {
                double score = c.A * raw(i, j) + c.B * x(i, j);
                double mean;
                if (ancestral) {
                    double x0hat = (x(i, j) + sh * sh * score) / ah;
                    if (cfg.x0_clip > 0.0) {
                        if (x0hat < -cfg.x0_clip || x0hat > cfg.x0_clip)
                            st.clamped[(size_t)i * d + j] = 1;
                        x0hat = clampd(x0hat, -cfg.x0_clip, cfg.x0_clip);
                    }
                    mean = sa.cx * x(i, j) + sa.cu * x0hat;
                } else {
                    mean = x(i, j) + dt * (f * x(i, j) - kdrift * score);
                }
                st.mean(i, j) = mean;
            }
        }
    }
    return out;
}

std::vector<double> dppo_chain_log_probs(const DiffusionPolicy& policy,
                                         const std::vector<DenoisingTrajectory>& chains,
                                         const MatD& states) {
    std::vector<ChainMeanStep> ms = chain_step_means(policy, chains, states, false);
    long n = (long)chains.size(), d = policy.act_dim();
    long T = chains.front().steps();
    std::vector<double> lp(n, 0.0);
    for (long k = 0; k < T; ++k) {
        for (long i = 0; i < n; ++i) {
            double s = chains[i].stds[k];
            if (s <= 0.0)
            throw DomainError(strfmt("chain step %ld has std %g; sample with std_floor > 0", k, s));
            double q = 0.0;
            for (long j = 0; j < d; ++j) {
                double dlt = chains[i].states(k + 1, j) - ms[k].mean(i, j);
                q += dlt * dlt;
            }
            lp[i] += -q / (2.0 * s * s) - 0.5 * (double)d * (kLog2Pi + 2.0 * std::log(s));
        }
    }
    return lp;
}

// ---------------------------------------------------------------------------
// DPPO

PgStats dppo_update(DiffusionPolicy& policy, const std::vector<DenoisingTrajectory>& chains,
                    const MatD& states, std::span<const double> advantages, const DppoConfig& cfg,
                    Optimizer& opt, Rng& rng) {
    long n = (long)chains.size();
    if (n == 0) throw DomainError("dppo_update: no chains");
    if ((long)advantages.size() != n) throw DimensionError("dppo advantages", n, (long)advantages.size());
    long d = policy.act_dim(), T = chains.front().steps();
    std::vector<double> adv = normalized_advantages(advantages, cfg.normalize_adv);

    // Behavior log-densities come straight from the stored transition params.
    MatD lp_old(n, T);
    for (long i = 0; i < n; ++i) {
        const DenoisingTrajectory& tr = chains[i];
        for (long k = 0; k < T; ++k) {
            double s = tr.stds[k];
            if (s <= 0.0)
                throw DomainError(strfmt("chain step %ld has std %g; sample with std_floor > 0", k, s));
            double q = 0.0;
            for (long j = 0; j < d; ++j) {
                double dlt = tr.states(k + 1, j) - tr.mean(k, j);
                q += dlt * dlt;
            }
            lp_old(i, k) = -q / (2.0 * s * s) - 0.5 * (double)d * (kLog2Pi + 2.0 * std::log(s));
        }
    }

    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    long mb_count = std::max(1L, std::min(cfg.minibatches, n));
    std::vector<double> grad(policy.field.net.params.size());

    PgStats stats;
    double ratio_acc = 0.0;
    long ratio_n = 0;

    for (long ep = 0; ep < cfg.epochs; ++ep) {
        shuffle_indices(idx, rng);
        for (long mb = 0; mb < mb_count; ++mb) {
            long lo = mb * n / mb_count, hi = (mb + 1) * n / mb_count;
            long m = hi - lo;
            if (m == 0) continue;

            std::vector<DenoisingTrajectory> sub(m);
            MatD sub_states(m, states.cols);
            std::vector<double> sub_adv(m);
            for (long r = 0; r < m; ++r) {
                sub[r] = chains[idx[lo + r]];
                sub_states.set_row(r, states.row(idx[lo + r]));
                sub_adv[r] = adv[idx[lo + r]];
            }

            std::vector<ChainMeanStep> ms = chain_step_means(policy, sub, sub_states, true);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            double inv = 1.0 / (double)(m * T);
            MatD dRaw(m, d);

            for (long k = 0; k < T; ++k) {
                ChainMeanStep& st = ms[k];
                dRaw.setZero();
                for (long r = 0; r < m; ++r) {
                    const DenoisingTrajectory& tr = sub[r];
                    double s = tr.stds[k];
                    double q = 0.0;
                    for (long j = 0; j < d; ++j) {
                        double dlt = tr.states(k + 1, j) - st.mean(r, j);
                        q += dlt * dlt;
                    }
                    double lp_new = -q / (2.0 * s * s) - 0.5 * (double)d * (kLog2Pi + 2.0 * std::log(s));
                    double ratio = std::exp(lp_new - lp_old(idx[lo + r], k));
                    loss -= clipped_surrogate(ratio, sub_adv[r], cfg.clip_eps) * inv;
                    if (ep == cfg.epochs - 1) {
                        ratio_acc += ratio;
                        ++ratio_n;
                    }
                    if (!ratio_active(ratio, sub_adv[r], cfg.clip_eps)) continue;
                    double dlp = -inv * sub_adv[r] * ratio;  // d(loss)/d(lp_new)
                    for (long j = 0; j < d; ++j) {
                        if (!st.clamped.empty() && st.clamped[(size_t)r * d + j]) continue;
                        // d lp_new / d mean = (x_lo - mean)/s^2
                        double dmean = dlp * (tr.states(k + 1, j) - st.mean(r, j)) / (s * s);
                        dRaw(r, j) = dmean * st.dmean_draw;
                    }
                }
                net_backward(policy.field.net, st.tape, dRaw, grad);
            }
            opt.step(policy.field.net.params, grad);
            stats.policy_loss = loss;
        }
    }
    stats.mean_ratio = ratio_n ? ratio_acc / (double)ratio_n : 1.0;
    return stats;
}

// ---------------------------------------------------------------------------
// FPO

FpoDraws fpo_make_draws(const DiffusionPolicy& policy, const MatD& states, const MatD& actions,
                        long num_mc, double t_min, Rng& rng) {
    if (num_mc < 1) throw DomainError("fpo num_mc must be >= 1");
    long n = actions.rows, d = actions.cols;
    FpoDraws dr;
    dr.t = MatD(n, num_mc);
    dr.eps = MatD(n, num_mc * d);
    for (long i = 0; i < n; ++i) {
        for (long m = 0; m < num_mc; ++m) dr.t(i, m) = rng.uniform(t_min, 1.0);
        rng.fill_normal(dr.eps.row(i));
    }
    dr.loss_old = fpo_cfm_losses(policy, states, actions, dr);
    return dr;
}

namespace {

// Shared forward pass: per (action, draw) epsilon-space residuals. Rows are
// grouped action-major: row i*M+m.
struct FpoForward {
    MatD resid;      // (n*M) x d, eps_hat - eps
    MatD x_t;        // perturbed actions
    std::vector<double> sig;  // per-row sigma(t)
    std::vector<double> As;   // per-row score-coefficient A
    NetTape tape;
    std::vector<double> loss;  // per-action mean squared residual
};

FpoForward fpo_forward(const DiffusionPolicy& policy, const MatD& states, const MatD& actions,
                       const FpoDraws& draws, bool with_tape) {
    const NoiseSchedule& sch = policy.schedule;
    long n = actions.rows, d = actions.cols, M = draws.t.cols;
    if (draws.eps.cols != M * d) throw DimensionError("fpo eps draws", M * d, draws.eps.cols);

    FpoForward f;
    f.x_t = MatD(n * M, d);
    f.sig.resize(n * M);
    f.As.resize(n * M);
    MatD cond(n * M, states.cols);
    std::vector<double> tv(n * M);
    for (long i = 0; i < n; ++i)
        for (long m = 0; m < M; ++m) {
            long r = i * M + m;
            tv[r] = draws.t(i, m);
            cond.set_row(r, states.row(i));
            std::span<const double> e(draws.eps.row(i).data() + m * d, (size_t)d);
            forward_perturb(sch, actions.row(i), tv[r], e, f.x_t.row(r));
            f.sig[r] = sch.sigma(tv[r]);
            f.As[r] = score_coeffs(policy.field.head, sch, tv[r]).A;
        }

    MatD raw = policy.field.raw(f.x_t, tv, cond, with_tape ? &f.tape : nullptr);
    f.resid = MatD(n * M, d);
    f.loss.assign(n, 0.0);
    for (long i = 0; i < n; ++i) {
        for (long m = 0; m < M; ++m) {
            long r = i * M + m;
            ScoreCoeffs c = score_coeffs(policy.field.head, sch, tv[r]);
            for (long j = 0; j < d; ++j) {
                double score = c.A * raw(r, j) + c.B * f.x_t(r, j);
                double eps_hat = -f.sig[r] * score;
                double e = eps_hat - draws.eps(i, m * d + j);
                f.resid(r, j) = e;
                f.loss[i] += e * e;
            }
        }
        f.loss[i] /= (double)M;
    }
    return f;
}

}  // namespace

std::vector<double> fpo_cfm_losses(const DiffusionPolicy& policy, const MatD& states,
                                   const MatD& actions, const FpoDraws& draws) {
    return fpo_forward(policy, states, actions, draws, false).loss;
}

PgStats fpo_update(DiffusionPolicy& policy, const MatD& states, const MatD& actions,
                   std::span<const double> advantages, const FpoDraws& draws, const FpoConfig& cfg,
                   Optimizer& opt, Rng& rng) {
    long n = actions.rows, d = actions.cols, M = cfg.num_mc;
    if (n == 0) throw DomainError("fpo_update: empty batch");
    if ((long)advantages.size() != n) throw DimensionError("fpo advantages", n, (long)advantages.size());
    if ((long)draws.loss_old.size() != n) throw DimensionError("fpo loss_old", n, (long)draws.loss_old.size());
    std::vector<double> adv = normalized_advantages(advantages, cfg.normalize_adv);

    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    long mb_count = std::max(1L, std::min(cfg.minibatches, n));
    std::vector<double> grad(policy.field.net.params.size());

    PgStats stats;
    double ratio_acc = 0.0;
    long ratio_n = 0;

    for (long ep = 0; ep < cfg.epochs; ++ep) {
        shuffle_indices(idx, rng);
        for (long mb = 0; mb < mb_count; ++mb) {
            long lo = mb * n / mb_count, hi = (mb + 1) * n / mb_count;
            long m = hi - lo;
            if (m == 0) continue;

            MatD sub_states(m, states.cols), sub_actions(m, d);
            FpoDraws sub;
            sub.t = MatD(m, M);
            sub.eps = MatD(m, M * d);
            std::vector<double> sub_adv(m), sub_old(m);
            for (long r = 0; r < m; ++r) {
                long i = idx[lo + r];
                sub_states.set_row(r, states.row(i));
                sub_actions.set_row(r, actions.row(i));
                sub.t.set_row(r, draws.t.row(i));
                sub.eps.set_row(r, draws.eps.row(i));
                sub_adv[r] = adv[i];
                sub_old[r] = draws.loss_old[i];
            }

            FpoForward f = fpo_forward(policy, sub_states, sub_actions, sub, true);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss = 0.0;
            MatD dRaw(m * M, d);
            for (long r = 0; r < m; ++r) {
                double logr = sub_old[r] - f.loss[r];
                bool guarded = false;
                if (cfg.clamp_enabled && std::abs(logr) > cfg.logr_clamp) {
                    logr = clampd(logr, -cfg.logr_clamp, cfg.logr_clamp);
                    guarded = true;
                }
                double ratio = std::exp(logr);
                loss -= clipped_surrogate(ratio, sub_adv[r], cfg.clip_eps) / (double)m;
                if (ep == cfg.epochs - 1) {
                    ratio_acc += ratio;
                    ++ratio_n;
                }
                if (guarded || !ratio_active(ratio, sub_adv[r], cfg.clip_eps)) continue;
                // d(loss)/d(L_new) = adv * ratio / m   (since dr/dL_new = -r)
                double dL = sub_adv[r] * ratio / (double)m;
                for (long mm = 0; mm < M; ++mm) {
                    long row = r * M + mm;
                    double c = dL * 2.0 / (double)M;
                    for (long j = 0; j < d; ++j)
                        dRaw(row, j) = c * f.resid(row, j) * (-f.sig[row] * f.As[row]);
                }
            }
            net_backward(policy.field.net, f.tape, dRaw, grad);
            opt.step(policy.field.net.params, grad);
            stats.policy_loss = loss;
        }
    }
    stats.mean_ratio = ratio_n ? ratio_acc / (double)ratio_n : 1.0;
    return stats;
}

// ---------------------------------------------------------------------------
// SAC

double SacState::alpha() const { return std::exp(log_alpha); }

namespace {

struct GaussianHeads {
    MatD out;                    // n x 2d raw head
    MatD mean, log_std;          // clamped
    std::vector<uint8_t> clamp;  // n*d, 1 where log_std clamp active
};

GaussianHeads gaussian_heads(const GaussianPolicy& policy, const MatD& states, NetTape* tape) {
    GaussianHeads h;
    h.out = net_forward(policy.net, states, tape);
    long n = states.rows, d = policy.act_dim;
    h.mean = MatD(n, d);
    h.log_std = MatD(n, d);
    h.clamp.assign((size_t)n * d, 0);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            h.mean(i, j) = h.out(i, j);
            double l = h.out(i, d + j);
            if (l < policy.log_std_min || l > policy.log_std_max) {
                h.clamp[(size_t)i * d + j] = 1;
                l = clampd(l, policy.log_std_min, policy.log_std_max);
            }
            h.log_std(i, j) = l;
        }
    return h;
}

}  // namespace

double sac_critic_update(const GaussianPolicy& policy, CriticEnsemble& critics,
                         const ReplayBuffer::Batch& batch, double alpha, double gamma, Rng& rng) {
    long n = batch.states.rows, d = policy.act_dim;
    GaussianHeads h = gaussian_heads(policy, batch.next_states, nullptr);

    MatD a_next(n, d);
    std::vector<double> logp(n, 0.0);
    for (long i = 0; i < n; ++i) {
        double lp = 0.0;
        for (long j = 0; j < d; ++j) {
            double sd = std::exp(h.log_std(i, j));
            double pre = h.mean(i, j) + sd * rng.normal();
            double z = (pre - h.mean(i, j)) / sd;
            lp += -0.5 * z * z - h.log_std(i, j) - 0.5 * kLog2Pi;
            if (policy.tanh_squash) {
                double sp = pre >= 0.0 ? std::log1p(std::exp(-2.0 * pre))
                                       : -2.0 * pre + std::log1p(std::exp(2.0 * pre));
                lp -= 2.0 * (0.6931471805599453094 - pre - sp);
                a_next(i, j) = std::tanh(pre);
            } else {
                a_next(i, j) = pre;
            }
        }
        logp[i] = lp;
    }

    std::vector<double> tq(n);
    critics.target_min(batch.next_states, a_next, tq);
    std::vector<double> y(n);
    for (long i = 0; i < n; ++i) {
        double cont = batch.terminal[i] ? 0.0 : 1.0;
        y[i] = batch.rewards[i] + gamma * cont * (tq[i] - alpha * logp[i]);
    }
    return critics.update(batch.states, batch.actions, y);
}

SacLosses sac_actor_update(GaussianPolicy& policy, const CriticEnsemble& critics, const MatD& states,
                           SacState& st, Optimizer& opt, Rng& rng) {
    long n = states.rows, d = policy.act_dim;
    double alpha = st.alpha();

    NetTape tape;
    GaussianHeads h = gaussian_heads(policy, states, &tape);

    MatD act(n, d), eps(n, d);
    std::vector<double> logp(n, 0.0);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < d; ++j) {
            double e = rng.normal();
            eps(i, j) = e;
            double sd = std::exp(h.log_std(i, j));
            double pre = h.mean(i, j) + sd * e;
            logp[i] += -0.5 * e * e - h.log_std(i, j) - 0.5 * kLog2Pi;
            if (policy.tanh_squash) {
                double sp = pre >= 0.0 ? std::log1p(std::exp(-2.0 * pre))
                                       : -2.0 * pre + std::log1p(std::exp(2.0 * pre));
                logp[i] -= 2.0 * (0.6931471805599453094 - pre - sp);
                act(i, j) = std::tanh(pre);
            } else {
                act(i, j) = pre;
            }
        }
    }

    std::vector<double> q(n);
    critics.q_batch(states, act, q);
    MatD gq(n, d);
    critics.grad_a_batch(states, act, gq);

    double actor_loss = 0.0;
    for (long i = 0; i < n; ++i) actor_loss += alpha * logp[i] - q[i];
    actor_loss /= (double)n;

    // Reparameterized head gradient. With u the pre-squash draw and a=tanh(u):
    //   dlogpi/dmean_j    = 2 a_j            (squash correction only)
    //   dlogpi/dlogstd_j  = -1 + 2 a_j sd e
    //   dQ-path/dmean_j   = gq_j (1 - a_j^2), times sd*e for logstd.
    MatD dOut(n, 2 * d);
    double inv_n = 1.0 / (double)n;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            double a = act(i, j);
            double sd = std::exp(h.log_std(i, j));
            double dpre = policy.tanh_squash ? 1.0 - a * a : 1.0;
            double corr = policy.tanh_squash ? 2.0 * a : 0.0;
            dOut(i, j) = inv_n * (alpha * corr - gq(i, j) * dpre);
            double g = inv_n * (alpha * (-1.0 + corr * sd * eps(i, j)) - gq(i, j) * dpre * sd * eps(i, j));
            dOut(i, d + j) = h.clamp[(size_t)i * d + j] ? 0.0 : g;
        }

    std::vector<double> grad(policy.net.params.size(), 0.0);
    net_backward(policy.net, tape, dOut, grad);
    opt.step(policy.net.params, grad);

    double mlp = mean_of(logp);
    // Dual ascent: entropy below target (mlp + target > 0) heats alpha up.
    st.log_alpha += st.alpha_lr * (mlp + st.target_entropy);

    SacLosses out;
    out.actor_loss = actor_loss;
    out.mean_log_prob = mlp;
    out.alpha = st.alpha();
    return out;
}

SacLosses sac_update(GaussianPolicy& policy, CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                     SacState& st, double gamma, Optimizer& actor_opt, Rng& rng) {
    double closs = sac_critic_update(policy, critics, batch, st.alpha(), gamma, rng);
    SacLosses out = sac_actor_update(policy, critics, batch.states, st, actor_opt, rng);
    out.critic_loss = closs;
    return out;
}

// ---------------------------------------------------------------------------
// PPO

double value_update(DenseNet& value_net, const MatD& states, std::span<const double> targets,
                    Optimizer& opt) {
    long n = states.rows;
    if ((long)targets.size() != n) throw DimensionError("value targets", n, (long)targets.size());
    NetTape tape;
    MatD v = net_forward(value_net, states, &tape);
    MatD dY(n, 1);
    double loss = 0.0;
    for (long i = 0; i < n; ++i) {
        double e = v(i, 0) - targets[i];
        loss += e * e;
        dY(i, 0) = 2.0 * e / (double)n;
    }
    loss /= (double)n;
    std::vector<double> grad(value_net.params.size(), 0.0);
    net_backward(value_net, tape, dY, grad);
    opt.step(value_net.params, grad);
    return loss;
}

PgStats ppo_update(GaussianPolicy& policy, DenseNet& value_net, const RolloutBuffer& rollout,
                   const PpoConfig& cfg, Optimizer& pi_opt, Optimizer& v_opt, Rng& rng) {
    if (policy.tanh_squash)
        throw DomainError("ppo_update needs an unsquashed Gaussian actor (exact log-probs)");
    long n = rollout.states.rows, d = policy.act_dim;
    if (n == 0) throw DomainError("ppo_update: empty rollout");
    if (rollout.advantages.empty()) throw DomainError("ppo_update: advantages not computed");
    std::vector<double> adv = normalized_advantages(rollout.advantages, cfg.normalize_adv);

    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    long mb_count = std::max(1L, std::min(cfg.minibatches, n));
    std::vector<double> grad(policy.net.params.size());

    PgStats stats;
    double ratio_acc = 0.0;
    long ratio_n = 0;

    for (long ep = 0; ep < cfg.epochs; ++ep) {
        shuffle_indices(idx, rng);
        for (long mb = 0; mb < mb_count; ++mb) {
            long lo = mb * n / mb_count, hi = (mb + 1) * n / mb_count;
            long m = hi - lo;
            if (m == 0) continue;

            MatD sub_states(m, rollout.states.cols), sub_actions(m, d);
            std::vector<double> sub_adv(m), sub_lp(m), sub_ret(m);
            for (long r = 0; r < m; ++r) {
                long i = idx[lo + r];
                sub_states.set_row(r, rollout.states.row(i));
                sub_actions.set_row(r, rollout.actions.row(i));
                sub_adv[r] = adv[i];
                sub_lp[r] = rollout.logprobs[i];
                sub_ret[r] = rollout.returns[i];
            }

            NetTape tape;
            GaussianHeads h = gaussian_heads(policy, sub_states, &tape);
            std::fill(grad.begin(), grad.end(), 0.0);
            MatD dOut(m, 2 * d);
            dOut.setZero();

            double ploss = 0.0, entropy = 0.0;
            for (long r = 0; r < m; ++r) {
                double lp = 0.0;
                for (long j = 0; j < d; ++j) {
                    double sd = std::exp(h.log_std(r, j));
                    double z = (sub_actions(r, j) - h.mean(r, j)) / sd;
                    lp += -0.5 * z * z - h.log_std(r, j) - 0.5 * kLog2Pi;
                    entropy += (h.log_std(r, j) + 0.5 * (1.0 + kLog2Pi)) / (double)m;
                }
                double ratio = std::exp(lp - sub_lp[r]);
                ploss -= clipped_surrogate(ratio, sub_adv[r], cfg.clip_eps) / (double)m;
                if (ep == cfg.epochs - 1) {
                    ratio_acc += ratio;
                    ++ratio_n;
                }
                double dlp = ratio_active(ratio, sub_adv[r], cfg.clip_eps)
                                 ? -sub_adv[r] * ratio / (double)m
                                 : 0.0;
                for (long j = 0; j < d; ++j) {
                    double sd = std::exp(h.log_std(r, j));
                    double z = (sub_actions(r, j) - h.mean(r, j)) / sd;
                    dOut(r, j) = dlp * (z / sd);
                    double g = dlp * (z * z - 1.0) - cfg.entropy_coef / (double)m;
                    dOut(r, d + j) = h.clamp[(size_t)r * d + j] ? 0.0 : g;
                }
            }
            ploss -= cfg.entropy_coef * entropy;

            net_backward(policy.net, tape, dOut, grad);
            pi_opt.step(policy.net.params, grad);
            stats.value_loss = value_update(value_net, sub_states, sub_ret, v_opt);
            stats.policy_loss = ploss;
            stats.entropy = entropy;
        }
    }
    stats.mean_ratio = ratio_n ? ratio_acc / (double)ratio_n : 1.0;
    return stats;
}

}  // namespace diffrl
