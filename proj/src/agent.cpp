#include "diffrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "diffrl/algos.hpp"
#include "diffrl/replay.hpp"

namespace diffrl {
namespace {

// ---------------------------------------------------------------------------
// config -> module plumbing

SamplerConfig sampler_from(const RunConfig& cfg) {
    SamplerConfig sc;
    sc.num_steps = cfg.integer("sampler.num_steps");
    sc.mode = SamplerConfig::mode_from_name(cfg.str("sampler.mode"));
    sc.eta = cfg.num("sampler.eta");
    sc.t_min = cfg.num("sampler.t_min");
    sc.x0_clip = cfg.num("sampler.x0_clip");
    sc.std_floor = cfg.num("sampler.std_floor");
    sc.validate();
    return sc;
}

DiffusionPolicy diffusion_policy_from(const RunConfig& cfg, const EnvSpec& spec, Rng& rng) {
    Rng init = rng.split("actor_init", rng.next_u64());
    return DiffusionPolicy::make(spec.obs_dim, spec.act_dim, cfg.int_list("actor.hidden"),
                                 activation_from_name(cfg.str("actor.activation")),
                                 head_from_name(cfg.str("actor.head")), cfg.integer("actor.time_embed_dim"),
                                 NoiseSchedule::from_name(cfg.str("sampler.schedule")), sampler_from(cfg),
                                 init);
}

CriticEnsemble critics_from(const RunConfig& cfg, const EnvSpec& spec, Rng& rng) {
    CriticConfig cc;
    cc.ensemble = cfg.integer("critic.ensemble");
    cc.hidden = cfg.int_list("critic.hidden");
    cc.act = activation_from_name(cfg.str("critic.activation"));
    cc.lr = cfg.num("critic.lr");
    cc.ema_rate = cfg.num("critic.ema_rate");
    cc.grad_clip = cfg.num("critic.grad_clip");
    Rng init = rng.split("critic_init", rng.next_u64());
    return CriticEnsemble::make(spec.obs_dim, spec.act_dim, cc, init);
}

Optimizer adam_opt(double lr, double grad_clip) {
    Optimizer o = Optimizer::adam(lr);
    o.grad_clip = grad_clip;
    return o;
}

std::vector<double> box_clip(std::span<const double> a) {
    std::vector<double> out(a.begin(), a.end());
    for (double& v : out) v = clampd(v, Env::kActLow, Env::kActHigh);
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint helpers

void put_net(Checkpoint& ck, const std::string& key, const DenseNet& net) { ck.nets[key] = net; }

void take_net(DenseNet& dst, const Checkpoint& ck, const std::string& key) {
    auto it = ck.nets.find(key);
    if (it == ck.nets.end()) throw DomainError("checkpoint missing net '" + key + "'");
    if (it->second.widths != dst.widths)
        throw DimensionError("checkpoint net '" + key + "' layer widths", static_cast<long>(dst.widths.size()),
                             static_cast<long>(it->second.widths.size()));
    dst = it->second;
}

std::vector<double> take_vec(const Checkpoint& ck, const std::string& key, size_t expect) {
    auto it = ck.vecs.find(key);
    if (it == ck.vecs.end()) throw DomainError("checkpoint missing vec '" + key + "'");
    if (it->second.size() != expect)
        throw DimensionError("checkpoint vec '" + key + "'", static_cast<long>(expect),
                             static_cast<long>(it->second.size()));
    return it->second;
}

void stamp_meta(Checkpoint& ck, const std::string& algo, const EnvSpec& spec) {
    ck.meta["algo"] = algo;
    ck.meta["env"] = spec.name;
    ck.meta["obs_dim"] = std::to_string(spec.obs_dim);
    ck.meta["act_dim"] = std::to_string(spec.act_dim);
}

void check_meta(const Checkpoint& ck, const std::string& algo, const EnvSpec& spec) {
    auto want = [&](const char* key, const std::string& v) {
        auto it = ck.meta.find(key);
        if (it != ck.meta.end() && it->second != v)
            throw DomainError(strfmt("checkpoint %s '%s' does not match agent '%s'", key, it->second.c_str(),
                                     v.c_str()));
    };
    want("algo", algo);
    want("obs_dim", std::to_string(spec.obs_dim));
    want("act_dim", std::to_string(spec.act_dim));
}

void save_critics(Checkpoint& ck, const CriticEnsemble& critics) {
    for (long m = 0; m < critics.ensemble_size(); ++m) {
        put_net(ck, strfmt("critic%ld", m), critics.members()[m]);
        put_net(ck, strfmt("critic%ld_target", m), critics.targets()[m]);
    }
}

void load_critics(CriticEnsemble& critics, const Checkpoint& ck) {
    for (long m = 0; m < critics.ensemble_size(); ++m) {
        take_net(critics.members()[m], ck, strfmt("critic%ld", m));
        take_net(critics.targets()[m], ck, strfmt("critic%ld_target", m));
    }
}

// Minibatch value fit shared by the diffusion on-policy agents (PPO's own
// update handles its value net internally). Returns the last batch loss.
double fit_value(DenseNet& vnet, Optimizer& opt, const MatD& states, std::span<const double> targets,
                 long epochs, long minibatches, Rng& rng) {
    const long n = states.rows;
    if (n == 0) return 0.0;
    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const long mb = std::max<long>(1, minibatches);
    double last = 0.0;
    for (long e = 0; e < epochs; ++e) {
        for (long i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
        for (long b = 0; b < mb; ++b) {
            const long lo = b * n / mb, hi = (b + 1) * n / mb;
            if (hi <= lo) continue;
            MatD sub(hi - lo, states.cols);
            std::vector<double> subt(hi - lo);
            for (long r = lo; r < hi; ++r) {
                sub.set_row(r - lo, states.row(idx[r]));
                subt[r - lo] = targets[idx[r]];
            }
            last = value_update(vnet, sub, subt, opt);
        }
    }
    return last;
}

// ---------------------------------------------------------------------------
// Off-policy skeleton: replay buffer, warmup gate, fractional update pacing.

class OffPolicyAgent : public Agent {
public:
    OffPolicyAgent(std::string algo, const RunConfig& cfg, const EnvSpec& spec)
        : algo_(std::move(algo)),
          spec_(spec),
          replay_(cfg.integer("train.replay_capacity"), spec.obs_dim, spec.act_dim),
          batch_size_(cfg.integer("train.batch_size")),
          warmup_frames_(cfg.integer("train.warmup_frames")),
          gamma_(cfg.num("train.gamma")),
          updates_per_frame_(cfg.num("train.updates_per_frame")),
          reward_scale_(cfg.num("train.reward_scale")) {}

    const std::string& algo() const override { return algo_; }

    void observe(const TransitionRecord& tr) override {
        TransitionRecord r = tr;
        r.reward *= reward_scale_;
        replay_.push(r);
    }

    MetricMap update(long frame, Rng& rng) override {
        if (frame <= warmup_frames_ || replay_.size() < batch_size_) return {};
        accum_ += updates_per_frame_;
        MetricMap mm;
        while (accum_ >= 1.0) {
            accum_ -= 1.0;
            ++update_count_;
            mm = do_update(rng);
        }
        return mm;
    }

protected:
    virtual MetricMap do_update(Rng& rng) = 0;

    std::string algo_;
    EnvSpec spec_;
    ReplayBuffer replay_;
    long batch_size_;
    long warmup_frames_;
    double gamma_;
    double updates_per_frame_;
    double reward_scale_;
    double accum_ = 0.0;
    long update_count_ = 0;
};

// ---------------------------------------------------------------------------
// SAC

class SacAgent final : public OffPolicyAgent {
public:
    SacAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : OffPolicyAgent("sac", cfg, spec),
          critics_(critics_from(cfg, spec, rng)),
          actor_opt_(adam_opt(cfg.num("actor.lr"), cfg.num("actor.grad_clip"))) {
        Rng init = rng.split("actor_init", rng.next_u64());
        policy_ = GaussianPolicy::make(spec.obs_dim, spec.act_dim, cfg.int_list("actor.hidden"),
                                       activation_from_name(cfg.str("actor.activation")),
                                       /*tanh_squash=*/true, init);
        st_.log_alpha = std::log(cfg.num("algo_cfg.init_alpha"));
        st_.target_entropy = -static_cast<double>(spec.act_dim);
        st_.alpha_lr = cfg.num("algo_cfg.alpha_lr");
    }

    std::vector<double> act(std::span<const double> state, Rng& rng) override {
        return policy_.sample(state, rng).action;
    }

    std::vector<double> act_eval(std::span<const double> state, Rng& rng, long bon_n) override {
        if (bon_n <= 1) return policy_.mean_action(state);
        std::vector<double> best;
        double best_q = -std::numeric_limits<double>::infinity();
        for (long k = 0; k < bon_n; ++k) {
            auto a = policy_.sample(state, rng).action;
            double q = critics_.q(state, a);
            if (q > best_q) {
                best_q = q;
                best = std::move(a);
            }
        }
        return best;
    }

    MatD sample_actions(const MatD& states, Rng& rng) override {
        MatD out(states.rows, spec_.act_dim);
        for (long i = 0; i < states.rows; ++i) out.set_row(i, policy_.sample(states.row(i), rng).action);
        return out;
    }

    void save(Checkpoint& ck) const override {
        stamp_meta(ck, algo_, spec_);
        put_net(ck, "actor", policy_.net);
        save_critics(ck, critics_);
        ck.vecs["sac_state"] = {st_.log_alpha};
    }

    void load(const Checkpoint& ck) override {
        check_meta(ck, algo_, spec_);
        take_net(policy_.net, ck, "actor");
        load_critics(critics_, ck);
        st_.log_alpha = take_vec(ck, "sac_state", 1)[0];
    }

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        SacLosses l = sac_update(policy_, critics_, batch, st_, gamma_, actor_opt_, rng);
        return {{"critic_loss", l.critic_loss},
                {"actor_loss", l.actor_loss},
                {"alpha", l.alpha},
                {"entropy", -l.mean_log_prob}};
    }

private:
    GaussianPolicy policy_;
    CriticEnsemble critics_;
    SacState st_;
    Optimizer actor_opt_;
};

// ---------------------------------------------------------------------------
// Shared base for the diffusion off-policy family (critic + chain policy).

class DiffusionOffPolicyAgent : public OffPolicyAgent {
public:
    DiffusionOffPolicyAgent(std::string algo, const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : OffPolicyAgent(std::move(algo), cfg, spec),
          policy_(diffusion_policy_from(cfg, spec, rng)),
          critics_(critics_from(cfg, spec, rng)),
          actor_opt_(adam_opt(cfg.num("actor.lr"), cfg.num("actor.grad_clip"))) {}

    std::vector<double> act(std::span<const double> state, Rng& rng) override { return policy_.act(state, rng); }

    std::vector<double> act_eval(std::span<const double> state, Rng& rng, long bon_n) override {
        if (bon_n <= 1) return policy_.act(state, rng);
        return bon_select(policy_, critics_, state, bon_n, rng);
    }

    MatD sample_actions(const MatD& states, Rng& rng) override { return policy_.sample_actions(states, rng); }

    void save(Checkpoint& ck) const override {
        stamp_meta(ck, algo_, spec_);
        put_net(ck, "actor", policy_.field.net);
        save_critics(ck, critics_);
        save_extra(ck);
    }

    void load(const Checkpoint& ck) override {
        check_meta(ck, algo_, spec_);
        take_net(policy_.field.net, ck, "actor");
        load_critics(critics_, ck);
        load_extra(ck);
    }

protected:
    virtual void save_extra(Checkpoint&) const {}
    virtual void load_extra(const Checkpoint&) {}

    double critic_step(const ReplayBuffer::Batch& batch, Rng& rng) {
        auto next_action = [this](const MatD& ns, Rng& r) { return policy_.sample_actions(ns, r); };
        auto targets = bellman_target(critics_, batch, next_action, gamma_, rng);
        return critic_update(critics_, batch, targets);
    }

    DiffusionPolicy policy_;
    CriticEnsemble critics_;
    Optimizer actor_opt_;
};

// ---------------------------------------------------------------------------
// QSM

class QsmAgent final : public DiffusionOffPolicyAgent {
public:
    QsmAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOffPolicyAgent("qsm", cfg, spec, rng) {
        qcfg_.lambda = cfg.num("guidance.lambda");
        qcfg_.num_samples = cfg.integer("guidance.num_samples");
        qcfg_.t_min = cfg.num("sampler.t_min");
    }

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        double cl = critic_step(batch, rng);
        double al = qsm_update(policy_, critics_, batch.states, qcfg_, actor_opt_, rng);
        return {{"critic_loss", cl}, {"actor_loss", al}};
    }

private:
    QsmConfig qcfg_;
};

// ---------------------------------------------------------------------------
// Weighted score matching (SDAC via reverse sampling, QVPO via uniform mix).

WeightedMatchingConfig weighted_cfg_from(const RunConfig& cfg) {
    WeightedMatchingConfig wc;
    wc.proposal = proposal_from_name(cfg.str("algo_cfg.proposal"));
    wc.lambda = cfg.num("guidance.lambda");
    wc.num_reverse_samples = cfg.integer("guidance.num_reverse_samples");
    wc.num_train_samples = cfg.integer("algo_cfg.num_train_samples");
    wc.num_behavior_samples = cfg.integer("algo_cfg.num_behavior_samples");
    wc.entropy_coef = cfg.num("algo_cfg.entropy_coef");
    wc.t_min = cfg.num("algo_cfg.loss_t_min");
    return wc;
}

class WeightedAgent final : public DiffusionOffPolicyAgent {
public:
    WeightedAgent(std::string algo, const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOffPolicyAgent(std::move(algo), cfg, spec, rng),
          wcfg_(weighted_cfg_from(cfg)),
          ref_pretrain_(cfg.integer("algo_cfg.ref_pretrain_updates")),
          ref_refresh_(cfg.integer("guidance.ref_refresh_interval")) {}

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        double cl = critic_step(batch, rng);
        double al;
        if (wcfg_.proposal == Proposal::prev_policy) {
            // Proposals come from a frozen snapshot, so the fit target is
            // ref·exp(Q/λ) — a fixed density, not a moving one. The snapshot
            // is taken after a short behavior-cloning phase on replay actions
            // (uniform exploration early on), which pins the reference near
            // the uniform prior the temperature is defined against.
            if (update_count_ <= ref_pretrain_) {
                std::vector<double> grad(policy_.field.net.params.size(), 0.0);
                al = score_matching_loss(policy_.field, policy_.schedule, batch.actions, batch.states,
                                         wcfg_.t_min, rng, grad);
                actor_opt_.step(policy_.field.net.params, grad);
                return {{"critic_loss", cl}, {"actor_loss", al}};
            }
            if (!ref_) ref_ = std::make_unique<DiffusionPolicy>(policy_);
            al = weighted_matching_update(policy_, ref_.get(), critics_, batch.states, nullptr, wcfg_,
                                          actor_opt_, rng);
            if (ref_refresh_ > 0 && (update_count_ - ref_pretrain_) % ref_refresh_ == 0)
                *ref_ = policy_;
        } else {
            al = weighted_matching_update(policy_, nullptr, critics_, batch.states, nullptr, wcfg_,
                                          actor_opt_, rng);
        }
        return {{"critic_loss", cl}, {"actor_loss", al}};
    }

    void save_extra(Checkpoint& ck) const override {
        if (ref_) put_net(ck, "ref_actor", ref_->field.net);
    }

    void load_extra(const Checkpoint& ck) override {
        if (ck.has_net("ref_actor")) {
            if (!ref_) ref_ = std::make_unique<DiffusionPolicy>(policy_);
            take_net(ref_->field.net, ck, "ref_actor");
        }
    }

private:
    WeightedMatchingConfig wcfg_;
    long ref_pretrain_;
    long ref_refresh_;
    std::unique_ptr<DiffusionPolicy> ref_;
};

// ---------------------------------------------------------------------------
// DPMD: weighted matching against a frozen reference with adaptive lambda.

class DpmdAgent final : public DiffusionOffPolicyAgent {
public:
    DpmdAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOffPolicyAgent("dpmd", cfg, spec, rng),
          st_{policy_, cfg.num("guidance.lambda"), cfg.num("guidance.target_kl"),
              cfg.integer("guidance.ref_refresh_interval"), 0, 0.0},
          wcfg_(weighted_cfg_from(cfg)) {}

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        double cl = critic_step(batch, rng);
        double al = dpmd_step(policy_, st_, critics_, batch.states, wcfg_, actor_opt_, rng);
        return {{"critic_loss", cl}, {"actor_loss", al}, {"kl_proxy", st_.kl_value}, {"lambda", st_.lambda}};
    }

    void save_extra(Checkpoint& ck) const override {
        put_net(ck, "ref_actor", st_.ref.field.net);
        ck.vecs["dpmd_state"] = {st_.lambda, static_cast<double>(st_.step_count)};
    }

    void load_extra(const Checkpoint& ck) override {
        take_net(st_.ref.field.net, ck, "ref_actor");
        auto v = take_vec(ck, "dpmd_state", 2);
        st_.lambda = v[0];
        st_.step_count = static_cast<long>(v[1]);
    }

private:
    DpmdState st_;
    WeightedMatchingConfig wcfg_;
};

// ---------------------------------------------------------------------------
// DACER: chain backprop actor with GMM-entropy temperature and scaled
// exploration noise on top of the chain sample.

class DacerAgent final : public DiffusionOffPolicyAgent {
public:
    DacerAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOffPolicyAgent("dacer", cfg, spec, rng),
          alpha_(cfg.num("algo_cfg.init_alpha")),
          alpha_lr_(cfg.num("algo_cfg.alpha_lr")),
          alpha_interval_(cfg.integer("algo_cfg.alpha_update_interval")),
          noise_scaler_(cfg.num("algo_cfg.noise_scaler")),
          entropy_samples_(cfg.integer("algo_cfg.entropy_num_samples")),
          actor_delay_(std::max<long>(1, cfg.integer("algo_cfg.actor_delay"))),
          target_entropy_(-static_cast<double>(spec.act_dim)) {}

    std::vector<double> act(std::span<const double> state, Rng& rng) override {
        auto a = policy_.act(state, rng);
        for (double& v : a) v = clampd(v + noise_scaler_ * alpha_ * rng.normal(), Env::kActLow, Env::kActHigh);
        return a;
    }

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        MetricMap mm{{"critic_loss", critic_step(batch, rng)}, {"alpha", alpha_}};
        if (update_count_ % actor_delay_ == 0)
            mm["actor_loss"] = reparam_bptt_update(policy_, critics_, batch.states, actor_opt_, rng);
        if (update_count_ % alpha_interval_ == 0) {
            double ent = estimate_entropy(batch.states, rng);
            alpha_ = dacer_alpha_step(alpha_, ent, target_entropy_, alpha_lr_);
            mm["entropy"] = ent;
            mm["alpha"] = alpha_;
        }
        return mm;
    }

    void save_extra(Checkpoint& ck) const override { ck.vecs["dacer_state"] = {alpha_}; }
    void load_extra(const Checkpoint& ck) override { alpha_ = take_vec(ck, "dacer_state", 1)[0]; }

private:
    // Mean plug-in entropy over a few batch states; each state gets its own
    // GMM fit on fresh chain samples. Kept small — this runs rarely but a
    // chain draw per sample adds up.
    double estimate_entropy(const MatD& states, Rng& rng) {
        const long m = std::min<long>(8, states.rows);
        double acc = 0.0;
        for (long i = 0; i < m; ++i) {
            MatD rep(entropy_samples_, states.cols);
            for (long k = 0; k < entropy_samples_; ++k) rep.set_row(k, states.row(i));
            MatD acts = policy_.sample_actions(rep, rng);
            acc += gmm_entropy_estimate(acts, 2, 50, rng);
        }
        return acc / static_cast<double>(m);
    }

    double alpha_, alpha_lr_;
    long alpha_interval_;
    double noise_scaler_;
    long entropy_samples_;
    long actor_delay_;
    double target_entropy_;
};

// ---------------------------------------------------------------------------
// EDP: one-step posterior-mean surrogate with a behavior-cloning anchor on
// replay actions.

class EdpAgent final : public DiffusionOffPolicyAgent {
public:
    EdpAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOffPolicyAgent("edp", cfg, spec, rng), bc_weight_(cfg.num("algo_cfg.bc_weight")) {}

protected:
    MetricMap do_update(Rng& rng) override {
        auto batch = replay_.sample(batch_size_, rng);
        double cl = critic_step(batch, rng);
        double al = edp_update(policy_, critics_, batch.states, batch.actions, bc_weight_, actor_opt_, rng);
        return {{"critic_loss", cl}, {"actor_loss", al}};
    }

private:
    double bc_weight_;
};

// ---------------------------------------------------------------------------
// On-policy skeleton: rollout buffer + value net + GAE.

class OnPolicyAgent : public Agent {
public:
    OnPolicyAgent(std::string algo, const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : algo_(std::move(algo)),
          spec_(spec),
          rollout_frames_(cfg.integer("train.rollout_frames")),
          reward_scale_(cfg.num("train.reward_scale")),
          epochs_(cfg.integer("algo_cfg.epochs")),
          minibatches_(cfg.integer("algo_cfg.minibatches")),
          v_opt_(adam_opt(cfg.num("algo_cfg.value_lr"), cfg.num("actor.grad_clip"))),
          pi_opt_(adam_opt(cfg.num("actor.lr"), cfg.num("actor.grad_clip"))) {
        // Every buffered action must come from this policy — uniform warmup
        // actions would poison the ratios.
        if (cfg.integer("train.warmup_frames") != 0)
            throw DomainError("on-policy agents need train.warmup_frames = 0");
        roll_.gamma = cfg.num("train.gamma");
        roll_.gae_lambda = cfg.num("algo_cfg.gae_lambda");
        roll_.reserve(rollout_frames_, spec.obs_dim, spec.act_dim);

        std::vector<long> vw{spec.obs_dim};
        for (long h : cfg.int_list("algo_cfg.value_hidden")) vw.push_back(h);
        vw.push_back(1);
        Rng vinit = rng.split("value_init", rng.next_u64());
        value_ = DenseNet::make(vw, activation_from_name(cfg.str("algo_cfg.value_activation")), vinit);
    }

    const std::string& algo() const override { return algo_; }

    void observe(const TransitionRecord& tr) override {
        double v = value1(tr.state);
        double nv = tr.terminal ? 0.0 : value1(tr.next_state);
        roll_.push(tr.state, action_for_buffer(tr), reward_scale_ * tr.reward, v, nv, pending_logp_,
                   tr.terminal, tr.truncated);
        after_push(tr);
        pending_logp_ = 0.0;
    }

    MetricMap update(long /*frame*/, Rng& rng) override {
        if (roll_.size() < rollout_frames_) return {};
        roll_.compute_gae();
        MetricMap mm = policy_update(rng);
        roll_.clear();
        return mm;
    }

protected:
    virtual MetricMap policy_update(Rng& rng) = 0;
    virtual std::span<const double> action_for_buffer(const TransitionRecord& tr) { return tr.action; }
    virtual void after_push(const TransitionRecord&) {}

    double value1(std::span<const double> s) const { return value_.forward1(s)[0]; }

    std::string algo_;
    EnvSpec spec_;
    RolloutBuffer roll_;
    long rollout_frames_;
    double reward_scale_;
    long epochs_, minibatches_;
    DenseNet value_;
    Optimizer v_opt_, pi_opt_;
    double pending_logp_ = 0.0;
};

// ---------------------------------------------------------------------------
// PPO

class PpoAgent final : public OnPolicyAgent {
public:
    PpoAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : OnPolicyAgent("ppo", cfg, spec, rng) {
        Rng init = rng.split("actor_init", rng.next_u64());
        policy_ = GaussianPolicy::make(spec.obs_dim, spec.act_dim, cfg.int_list("actor.hidden"),
                                       activation_from_name(cfg.str("actor.activation")),
                                       /*tanh_squash=*/false, init);
        pcfg_.clip_eps = cfg.num("guidance.clip_eps");
        pcfg_.epochs = epochs_;
        pcfg_.minibatches = minibatches_;
        pcfg_.entropy_coef = cfg.num("algo_cfg.ppo_entropy_coef");
    }

    std::vector<double> act(std::span<const double> state, Rng& rng) override {
        auto s = policy_.sample(state, rng);
        pending_raw_ = s.pre;  // raw draw: the ratio is taken at the unclipped action
        pending_logp_ = s.log_prob;
        return box_clip(s.action);
    }

    std::vector<double> act_eval(std::span<const double> state, Rng&, long bon_n) override {
        if (bon_n > 1) throw DomainError("best-of-N needs a learned Q function; ppo has none");
        return box_clip(policy_.mean_action(state));
    }

    MatD sample_actions(const MatD& states, Rng& rng) override {
        MatD out(states.rows, spec_.act_dim);
        for (long i = 0; i < states.rows; ++i) out.set_row(i, box_clip(policy_.sample(states.row(i), rng).action));
        return out;
    }

    void save(Checkpoint& ck) const override {
        stamp_meta(ck, algo_, spec_);
        put_net(ck, "actor", policy_.net);
        put_net(ck, "value", value_);
    }

    void load(const Checkpoint& ck) override {
        check_meta(ck, algo_, spec_);
        take_net(policy_.net, ck, "actor");
        take_net(value_, ck, "value");
    }

protected:
    std::span<const double> action_for_buffer(const TransitionRecord&) override { return pending_raw_; }

    MetricMap policy_update(Rng& rng) override {
        PgStats ps = ppo_update(policy_, value_, roll_, pcfg_, pi_opt_, v_opt_, rng);
        return {{"policy_loss", ps.policy_loss},
                {"value_loss", ps.value_loss},
                {"entropy", ps.entropy},
                {"mean_ratio", ps.mean_ratio}};
    }

private:
    GaussianPolicy policy_;
    PpoConfig pcfg_;
    std::vector<double> pending_raw_;
};

// ---------------------------------------------------------------------------
// Shared base for the diffusion on-policy agents.

class DiffusionOnPolicyAgent : public OnPolicyAgent {
public:
    DiffusionOnPolicyAgent(std::string algo, const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : OnPolicyAgent(std::move(algo), cfg, spec, rng), policy_(diffusion_policy_from(cfg, spec, rng)) {}

    std::vector<double> act_eval(std::span<const double> state, Rng& rng, long bon_n) override {
        if (bon_n > 1) throw DomainError("best-of-N needs a learned Q function; " + algo_ + " has none");
        return policy_.act(state, rng);
    }

    MatD sample_actions(const MatD& states, Rng& rng) override { return policy_.sample_actions(states, rng); }

    void save(Checkpoint& ck) const override {
        stamp_meta(ck, algo_, spec_);
        put_net(ck, "actor", policy_.field.net);
        put_net(ck, "value", value_);
    }

    void load(const Checkpoint& ck) override {
        check_meta(ck, algo_, spec_);
        take_net(policy_.field.net, ck, "actor");
        take_net(value_, ck, "value");
    }

protected:
    DiffusionPolicy policy_;
};

// ---------------------------------------------------------------------------
// DPPO: PPO over the recorded denoising chains.

class DppoAgent final : public DiffusionOnPolicyAgent {
public:
    DppoAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOnPolicyAgent("dppo", cfg, spec, rng) {
        dcfg_.clip_eps = cfg.num("guidance.clip_eps");
        dcfg_.epochs = epochs_;
        dcfg_.minibatches = minibatches_;
        if (policy_.sampler.std_floor <= 0.0)
            throw DomainError("dppo needs sampler.std_floor > 0 for finite chain densities");
    }

    std::vector<double> act(std::span<const double> state, Rng& rng) override {
        MatD s(1, spec_.obs_dim);
        s.set_row(0, state);
        std::vector<DenoisingTrajectory> traj;
        MatD a = policy_.sample_actions(s, rng, &traj);
        pending_chain_ = std::move(traj[0]);
        return {a.row(0).begin(), a.row(0).end()};
    }

protected:
    void after_push(const TransitionRecord&) override { chains_.push_back(std::move(pending_chain_)); }

    MetricMap policy_update(Rng& rng) override {
        PgStats ps = dppo_update(policy_, chains_, roll_.states, roll_.advantages, dcfg_, pi_opt_, rng);
        double vl = fit_value(value_, v_opt_, roll_.states, roll_.returns, epochs_, minibatches_, rng);
        chains_.clear();
        return {{"policy_loss", ps.policy_loss},
                {"value_loss", vl},
                {"mean_ratio", ps.mean_ratio}};
    }

private:
    DppoConfig dcfg_;
    std::vector<DenoisingTrajectory> chains_;
    DenoisingTrajectory pending_chain_;
};

// ---------------------------------------------------------------------------
// FPO: denoising-loss ratios with common draws.

class FpoAgent final : public DiffusionOnPolicyAgent {
public:
    FpoAgent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng)
        : DiffusionOnPolicyAgent("fpo", cfg, spec, rng) {
        fcfg_.clip_eps = cfg.num("guidance.clip_eps");
        fcfg_.num_mc = cfg.integer("guidance.num_mc_samples");
        fcfg_.logr_clamp = cfg.num("algo_cfg.logr_clamp");
        fcfg_.clamp_enabled = cfg.boolean("algo_cfg.ratio_clamp_enabled");
        fcfg_.epochs = epochs_;
        fcfg_.minibatches = minibatches_;
        fcfg_.t_min = cfg.num("sampler.t_min");
    }

    std::vector<double> act(std::span<const double> state, Rng& rng) override {
        return policy_.act(state, rng);
    }

protected:
    MetricMap policy_update(Rng& rng) override {
        FpoDraws draws =
            fpo_make_draws(policy_, roll_.states, roll_.actions, fcfg_.num_mc, fcfg_.t_min, rng);
        PgStats ps = fpo_update(policy_, roll_.states, roll_.actions, roll_.advantages, draws, fcfg_,
                                pi_opt_, rng);
        double vl = fit_value(value_, v_opt_, roll_.states, roll_.returns, epochs_, minibatches_, rng);
        return {{"policy_loss", ps.policy_loss},
                {"value_loss", vl},
                {"mean_ratio", ps.mean_ratio}};
    }

private:
    FpoConfig fcfg_;
};

}  // namespace

std::unique_ptr<Agent> make_agent(const RunConfig& cfg, const EnvSpec& spec, Rng& rng) {
    const std::string algo = cfg.algo();
    if (algo == "sac") return std::make_unique<SacAgent>(cfg, spec, rng);
    if (algo == "ppo") return std::make_unique<PpoAgent>(cfg, spec, rng);
    if (algo == "qsm") return std::make_unique<QsmAgent>(cfg, spec, rng);
    if (algo == "dacer") return std::make_unique<DacerAgent>(cfg, spec, rng);
    if (algo == "edp") return std::make_unique<EdpAgent>(cfg, spec, rng);
    if (algo == "dpmd") return std::make_unique<DpmdAgent>(cfg, spec, rng);
    if (algo == "sdac" || algo == "qvpo") return std::make_unique<WeightedAgent>(algo, cfg, spec, rng);
    if (algo == "dppo") return std::make_unique<DppoAgent>(cfg, spec, rng);
    if (algo == "fpo") return std::make_unique<FpoAgent>(cfg, spec, rng);
    throw DomainError("unknown algorithm '" + algo + "'");
}

}  // namespace diffrl
