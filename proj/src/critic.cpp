#include "diffrl/critic.hpp"

namespace diffrl {

void QFunction::q_batch(const MatD& s, const MatD& a, std::span<double> out) const {
    for (long i = 0; i < s.rows; ++i) out[i] = q(s.row(i), a.row(i));
}

void QFunction::grad_a_batch(const MatD& s, const MatD& a, MatD& out) const {
    out = MatD(a.rows, a.cols);
    for (long i = 0; i < s.rows; ++i) grad_a(s.row(i), a.row(i), out.row(i));
}

CriticEnsemble CriticEnsemble::make(long obs_dim, long act_dim, const CriticConfig& cfg, Rng& rng) {
    if (cfg.ensemble < 1) throw DomainError("critic ensemble size < 1");
    CriticEnsemble c;
    c.obs_dim_ = obs_dim;
    c.act_dim_ = act_dim;
    c.cfg_ = cfg;
    std::vector<long> widths;
    widths.push_back(obs_dim + act_dim);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(1);
    for (long m = 0; m < cfg.ensemble; ++m) {
        Rng sub = rng.split("critic_member", static_cast<uint64_t>(m));
        c.members_.push_back(DenseNet::make(widths, cfg.act, sub));
        c.targets_.push_back(c.members_.back());  // targets start as copies
        Optimizer o = Optimizer::adam(cfg.lr);
        o.grad_clip = cfg.grad_clip;
        c.opts_.push_back(o);
    }
    return c;
}

MatD CriticEnsemble::join(const MatD& s, const MatD& a) const {
    if (s.cols != obs_dim_) throw DimensionError("critic state dim", obs_dim_, s.cols);
    if (a.cols != act_dim_) throw DimensionError("critic action dim", act_dim_, a.cols);
    if (s.rows != a.rows) throw DimensionError("critic batch rows", s.rows, a.rows);
    MatD in(s.rows, obs_dim_ + act_dim_);
    for (long i = 0; i < s.rows; ++i) {
        std::copy(s.row(i).begin(), s.row(i).end(), in.row(i).begin());
        std::copy(a.row(i).begin(), a.row(i).end(), in.row(i).begin() + obs_dim_);
    }
    return in;
}

void CriticEnsemble::q_batch(const MatD& s, const MatD& a, std::span<double> out) const {
    MatD in = join(s, a);
    for (size_t m = 0; m < members_.size(); ++m) {
        MatD y = net_forward(members_[m], in);
        for (long i = 0; i < s.rows; ++i) {
            if (m == 0 || y(i, 0) < out[i]) out[i] = y(i, 0);
        }
    }
}

double CriticEnsemble::q(std::span<const double> s, std::span<const double> a) const {
    MatD sm(1, obs_dim_), am(1, act_dim_);
    sm.set_row(0, s);
    am.set_row(0, a);
    double out = 0.0;
    q_batch(sm, am, {&out, 1});
    return out;
}

void CriticEnsemble::grad_a_batch(const MatD& s, const MatD& a, MatD& out) const {
    MatD in = join(s, a);
    long n = s.rows;
    // min over members: gradient flows through the per-row argmin member
    std::vector<MatD> preds(members_.size());
    std::vector<NetTape> tapes(members_.size());
    for (size_t m = 0; m < members_.size(); ++m) preds[m] = net_forward(members_[m], in, &tapes[m]);
    std::vector<long> argmin(n, 0);
    for (long i = 0; i < n; ++i)
        for (size_t m = 1; m < members_.size(); ++m)
            if (preds[m](i, 0) < preds[argmin[i]](i, 0)) argmin[i] = static_cast<long>(m);

    out = MatD(n, act_dim_);
    std::vector<double> scratch;  // unused param grad sink
    for (size_t m = 0; m < members_.size(); ++m) {
        MatD dY(n, 1);
        bool any = false;
        for (long i = 0; i < n; ++i) {
            dY(i, 0) = (argmin[i] == static_cast<long>(m)) ? 1.0 : 0.0;
            any = any || argmin[i] == static_cast<long>(m);
        }
        if (!any) continue;
        scratch.assign(members_[m].params.size(), 0.0);
        MatD dIn;
        net_backward(members_[m], tapes[m], dY, scratch, &dIn);
        for (long i = 0; i < n; ++i) {
            if (argmin[i] != static_cast<long>(m)) continue;
            for (long j = 0; j < act_dim_; ++j) out(i, j) = dIn(i, obs_dim_ + j);
        }
    }
}

void CriticEnsemble::grad_a(std::span<const double> s, std::span<const double> a, std::span<double> out) const {
    MatD sm(1, obs_dim_), am(1, act_dim_);
    sm.set_row(0, s);
    am.set_row(0, a);
    MatD g;
    grad_a_batch(sm, am, g);
    std::copy(g.row(0).begin(), g.row(0).end(), out.begin());
}

void CriticEnsemble::target_min(const MatD& s, const MatD& a, std::span<double> out) const {
    MatD in = join(s, a);
    for (size_t m = 0; m < targets_.size(); ++m) {
        MatD y = net_forward(targets_[m], in);
        for (long i = 0; i < s.rows; ++i)
            if (m == 0 || y(i, 0) < out[i]) out[i] = y(i, 0);
    }
}

void CriticEnsemble::member_q(long m, const MatD& s, const MatD& a, std::span<double> out) const {
    MatD y = net_forward(members_.at(m), join(s, a));
    for (long i = 0; i < s.rows; ++i) out[i] = y(i, 0);
}

double CriticEnsemble::update(const MatD& s, const MatD& a, std::span<const double> targets) {
    MatD in = join(s, a);
    long n = s.rows;
    if (static_cast<long>(targets.size()) != n)
        throw DimensionError("critic targets", n, static_cast<long>(targets.size()));
    double total = 0.0;
    std::vector<double> grad;
    for (size_t m = 0; m < members_.size(); ++m) {
        NetTape tape;
        MatD y = net_forward(members_[m], in, &tape);
        MatD dY(n, 1);
        double loss = 0.0;
        for (long i = 0; i < n; ++i) {
            double e = y(i, 0) - targets[i];
            loss += e * e;
            dY(i, 0) = 2.0 * e / static_cast<double>(n);
        }
        loss /= static_cast<double>(n);
        total += loss;
        grad.assign(members_[m].params.size(), 0.0);
        net_backward(members_[m], tape, dY, grad, nullptr);
        opts_[m].step(members_[m].params, grad);
        ema_update(targets_[m].params, members_[m].params, cfg_.ema_rate);
    }
    return total;
}

std::vector<double> bellman_target(const CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                                   const NextActionSampler& next_action, double gamma, Rng& rng) {
    long n = batch.size();
    MatD a_next = next_action(batch.next_states, rng);
    std::vector<double> qmin(n);
    critics.target_min(batch.next_states, a_next, {qmin.data(), qmin.size()});
    std::vector<double> y(n);
    for (long i = 0; i < n; ++i) {
        double cont = batch.terminal[i] ? 0.0 : gamma * qmin[i];
        y[i] = batch.rewards[i] + cont;
    }
    return y;
}

double critic_update(CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                     std::span<const double> targets) {
    return critics.update(batch.states, batch.actions, targets);
}

}  // namespace diffrl
