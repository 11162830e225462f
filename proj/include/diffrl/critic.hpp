#pragma once

#include <functional>

#include "diffrl/net.hpp"
#include "diffrl/replay.hpp"

namespace diffrl {

// Anything that scores (state, action) pairs and exposes the action
// gradient. Implemented by the learned ensemble and by analytic wrappers
// around the bandit oracles.
struct QFunction {
    virtual ~QFunction() = default;
    virtual long obs_dim() const = 0;
    virtual long act_dim() const = 0;
    virtual double q(std::span<const double> s, std::span<const double> a) const = 0;
    virtual void grad_a(std::span<const double> s, std::span<const double> a, std::span<double> out) const = 0;

    // Batched defaults loop; the ensemble overrides with real batching.
    virtual void q_batch(const MatD& s, const MatD& a, std::span<double> out) const;
    virtual void grad_a_batch(const MatD& s, const MatD& a, MatD& out) const;
};

// Analytic Q from closures (bandit oracles, hand-built test critics).
struct AnalyticQ final : QFunction {
    long od = 0, ad = 0;
    std::function<double(std::span<const double>, std::span<const double>)> qf;
    std::function<void(std::span<const double>, std::span<const double>, std::span<double>)> gf;

    long obs_dim() const override { return od; }
    long act_dim() const override { return ad; }
    double q(std::span<const double> s, std::span<const double> a) const override { return qf(s, a); }
    void grad_a(std::span<const double> s, std::span<const double> a, std::span<double> out) const override {
        gf(s, a, out);
    }
};

struct CriticConfig {
    long ensemble = 2;
    std::vector<long> hidden{256, 256};
    Activation act = Activation::relu;
    double lr = 3e-4;
    double ema_rate = 0.005;
    double grad_clip = 0.0;
    bool actor_min = true;  // actor objectives use the ensemble min too
};

// Q ensemble over [state | action] inputs with EMA target copies.
class CriticEnsemble final : public QFunction {
public:
    static CriticEnsemble make(long obs_dim, long act_dim, const CriticConfig& cfg, Rng& rng);

    long obs_dim() const override { return obs_dim_; }
    long act_dim() const override { return act_dim_; }
    long ensemble_size() const { return static_cast<long>(members_.size()); }

    double q(std::span<const double> s, std::span<const double> a) const override;
    void grad_a(std::span<const double> s, std::span<const double> a, std::span<double> out) const override;
    void q_batch(const MatD& s, const MatD& a, std::span<double> out) const override;
    void grad_a_batch(const MatD& s, const MatD& a, MatD& out) const override;

    // Elementwise min over the EMA target copies.
    void target_min(const MatD& s, const MatD& a, std::span<double> out) const;
    // Single member's online prediction (tests poke at ensemble spread).
    void member_q(long m, const MatD& s, const MatD& a, std::span<double> out) const;

    // Mean squared error per member against shared targets, one optimizer
    // step each, then the EMA refresh. Returns the summed member loss.
    double update(const MatD& s, const MatD& a, std::span<const double> targets);

    std::vector<DenseNet>& members() { return members_; }
    const std::vector<DenseNet>& members() const { return members_; }
    std::vector<DenseNet>& targets() { return targets_; }
    const std::vector<DenseNet>& targets() const { return targets_; }
    const CriticConfig& config() const { return cfg_; }
    std::vector<Optimizer>& optimizers() { return opts_; }

private:
    long obs_dim_ = 0, act_dim_ = 0;
    CriticConfig cfg_;
    std::vector<DenseNet> members_, targets_;
    std::vector<Optimizer> opts_;

    MatD join(const MatD& s, const MatD& a) const;
};

// y = r + gamma * (1 - terminal) * min_targets Q(s', a') with a' drawn by the
// supplied policy sampler (one draw per transition).
using NextActionSampler = std::function<MatD(const MatD& next_states, Rng& rng)>;
std::vector<double> bellman_target(const CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                                   const NextActionSampler& next_action, double gamma, Rng& rng);

// Convenience wrapper matching the ensemble update contract.
double critic_update(CriticEnsemble& critics, const ReplayBuffer::Batch& batch,
                     std::span<const double> targets);

}  // namespace diffrl
