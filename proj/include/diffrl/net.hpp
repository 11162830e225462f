#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "diffrl/rng.hpp"
#include "diffrl/util.hpp"

namespace diffrl {

enum class Activation { relu, mish, elu, silu, tanh_fn, identity };

Activation activation_from_name(std::string_view name);
const char* activation_name(Activation a);

// Scalar activation and its exact derivative, exposed so tests can probe the
// formulas directly.
double act_eval(Activation a, double x);
double act_deriv(Activation a, double x);

// Fully connected net over a flat 64-bit parameter vector. Layout per layer l:
// weight block W_l (out x in, row major) followed by bias b_l, so a layer
// occupies (in+1)*out slots. forward() returns the last layer pre-activation;
// output heads apply their own maps.
struct DenseNet {
    std::vector<long> widths;  // [in, h1, ..., out]
    Activation act = Activation::relu;
    std::vector<double> params;

    long num_layers() const { return static_cast<long>(widths.size()) - 1; }
    long in_dim() const { return widths.front(); }
    long out_dim() const { return widths.back(); }

    long weight_offset(long layer) const;
    long bias_offset(long layer) const { return weight_offset(layer) + widths[layer] * widths[layer + 1]; }
    static long param_count(std::span<const long> widths);

    // Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    static DenseNet make(std::vector<long> widths, Activation act, Rng& rng);

    void forward(std::span<const double> input, std::span<double> output) const;
    std::vector<double> forward1(std::span<const double> input) const;

    void check_params() const;  // layout invariant; throws DimensionError
};

// Saved intermediates from a batched forward, enough to run reverse mode.
struct NetTape {
    MatD input;               // n x widths[0]
    std::vector<MatD> pre;    // pre-activations of hidden layers
    std::vector<MatD> acts;   // post-activations of hidden layers
};

// Batched forward; X is n x in_dim. Throws NonFiniteError (with layer index)
// if any intermediate goes non-finite.
MatD net_forward(const DenseNet& net, const MatD& X, NetTape* tape = nullptr);

// Reverse pass. dY is n x out_dim; gradients accumulate into param_grad
// (+=, so callers zero it between batches). dX, when non-null, receives the
// input gradient.
void net_backward(const DenseNet& net, const NetTape& tape, const MatD& dY,
                  std::span<double> param_grad, MatD* dX = nullptr);

struct GradResult {
    double loss = 0.0;
    std::vector<double> param_grad;
    std::vector<double> input_grad;
};

// Single-sample convenience: loss_head fills dloss/dout and returns the loss.
using LossHead = std::function<double(std::span<const double> out, std::span<double> dout)>;
GradResult net_grad(const DenseNet& net, const LossHead& loss_head, std::span<const double> input);

struct Optimizer {
    enum class Kind { sgd, adam };
    Kind kind = Kind::adam;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global L2 clip; 0 disables

    long t = 0;
    std::vector<double> m, v;

    static Optimizer sgd(double lr);
    static Optimizer adam(double lr);

    // Applies one update in place. grad may be rescaled by the clip.
    void step(std::span<double> params, std::span<double> grad);
};

// target <- (1-rate)*target + rate*online
void ema_update(std::span<double> target, std::span<const double> online, double rate);

// Deterministic sinusoidal features of a scalar time. dim must be even;
// frequencies are geometrically spaced over [1, 1e4]. Output layout is
// (sin(f_i t), cos(f_i t)) pairs, so each pair has unit norm.
struct FourierTimeEmbedding {
    long dim = 0;
    std::vector<double> freqs;

    static FourierTimeEmbedding make(long dim);
    void embed(double t, std::span<double> out) const;
};

}  // namespace diffrl
