#pragma once

#include "diffrl/net.hpp"
#include "diffrl/schedule.hpp"

namespace diffrl {

enum class Head { score, epsilon, velocity };

Head head_from_name(std::string_view name);
const char* head_name(Head h);

// For any head, the score is an affine function of the raw net output at
// fixed (x, t): score = A*raw + B*x. Having the two scalars explicit is what
// keeps losses and chain backprop head-agnostic.
struct ScoreCoeffs {
    double A = 1.0;
    double B = 0.0;
};
ScoreCoeffs score_coeffs(Head h, const NoiseSchedule& sch, double t);

// Algebraic conversion between parameterizations at (x_t, t).
// Singular at t=0 whenever epsilon or velocity is involved (sigma(0)=0).
void convert_head(std::span<const double> in, Head from, Head to, const NoiseSchedule& sch,
                  std::span<const double> x_t, double t, std::span<double> out);

// Time- and state-conditioned network over samples x. Net input rows are
// [x | fourier(t) | condition]; the raw output is interpreted per `head`.
struct ScoreField {
    DenseNet net;
    FourierTimeEmbedding time_embed;
    Head head = Head::epsilon;
    long sample_dim = 0;
    long condition_dim = 0;  // 0 = unconditional

    static ScoreField make(long sample_dim, long condition_dim, const std::vector<long>& hidden,
                           Activation act, Head head, long embed_dim, Rng& rng);

    long input_dim() const { return sample_dim + time_embed.dim + condition_dim; }

    // cond must be x.rows × condition_dim (a rows × 0 matrix when unconditional).
    MatD build_input(const MatD& x, std::span<const double> t, const MatD& cond) const;

    // Raw head output (batched); per-row times.
    MatD raw(const MatD& x, std::span<const double> t, const MatD& cond, NetTape* tape = nullptr) const;

    // Score-space output: A(t)*raw + B(t)*x per row.
    MatD score(const MatD& x, std::span<const double> t, const MatD& cond, const NoiseSchedule& sch) const;

    // Single-sample convenience.
    std::vector<double> score1(std::span<const double> x, double t, std::span<const double> cond,
                               const NoiseSchedule& sch) const;
};

}  // namespace diffrl
