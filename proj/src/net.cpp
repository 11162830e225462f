#include "diffrl/net.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace diffrl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

Activation activation_from_name(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "mish") return Activation::mish;
    if (name == "elu") return Activation::elu;
    if (name == "silu") return Activation::silu;
    if (name == "tanh") return Activation::tanh_fn;
    if (name == "identity") return Activation::identity;
    throw FormatError(strfmt("unknown activation '%.*s'", static_cast<int>(name.size()), name.data()));
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::mish: return "mish";
        case Activation::elu: return "elu";
        case Activation::silu: return "silu";
        case Activation::tanh_fn: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

static inline double softplus_stable(double x) {
    // For x > 20, log(1+e^x) == x to double precision; spelling it out also
    // keeps exp() from overflowing.
    if (x > 20.0) return x;
    return std::log1p(std::exp(x));
}

static inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double act_eval(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::mish: return x * std::tanh(softplus_stable(x));
        case Activation::elu: return x > 0.0 ? x : std::expm1(x);
        case Activation::silu: return x * sigmoid(x);
        case Activation::tanh_fn: return std::tanh(x);
        case Activation::identity: return x;
    }
    return x;
}

double act_deriv(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::mish: {
            double th = std::tanh(softplus_stable(x));
            return th + x * (1.0 - th * th) * sigmoid(x);
        }
        case Activation::elu: return x > 0.0 ? 1.0 : std::exp(x);
        case Activation::silu: {
            double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        }
        case Activation::tanh_fn: {
            double th = std::tanh(x);
            return 1.0 - th * th;
        }
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

static void apply_act(Activation a, MatD& m) {
    if (a == Activation::identity) return;
    for (double& x : m.data) x = act_eval(a, x);
}

long DenseNet::weight_offset(long layer) const {
    long off = 0;
    for (long l = 0; l < layer; ++l) off += (widths[l] + 1) * widths[l + 1];
    return off;
}

long DenseNet::param_count(std::span<const long> w) {
    long n = 0;
    for (size_t l = 0; l + 1 < w.size(); ++l) n += (w[l] + 1) * w[l + 1];
    return n;
}

void DenseNet::check_params() const {
    if (widths.size() < 2) throw DimensionError("DenseNet widths", 2, static_cast<long>(widths.size()));
    long want = param_count(widths);
    if (static_cast<long>(params.size()) != want)
        throw DimensionError("DenseNet params", want, static_cast<long>(params.size()));
}

DenseNet DenseNet::make(std::vector<long> widths, Activation act, Rng& rng) {
    DenseNet net;
    net.widths = std::move(widths);
    net.act = act;
    if (net.widths.size() < 2) throw DimensionError("DenseNet widths", 2, static_cast<long>(net.widths.size()));
    net.params.assign(param_count(net.widths), 0.0);
    for (long l = 0; l + 1 < static_cast<long>(net.widths.size()); ++l) {
        long in = net.widths[l], out = net.widths[l + 1];
        double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        double* w = net.params.data() + net.weight_offset(l);
        for (long i = 0; i < in * out; ++i) w[i] = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return net;
}

void DenseNet::forward(std::span<const double> input, std::span<double> output) const {
    check_params();
    if (static_cast<long>(input.size()) != in_dim())
        throw DimensionError("DenseNet::forward input", in_dim(), static_cast<long>(input.size()));
    if (static_cast<long>(output.size()) != out_dim())
        throw DimensionError("DenseNet::forward output", out_dim(), static_cast<long>(output.size()));
    std::vector<double> cur(input.begin(), input.end()), nxt;
    const long L = num_layers();
    for (long l = 0; l < L; ++l) {
        const long in = widths[l], out = widths[l + 1];
        nxt.assign(out, 0.0);
        const double* w = params.data() + weight_offset(l);
        const double* b = params.data() + bias_offset(l);
        for (long o = 0; o < out; ++o) {
            double s = b[o];
            const double* wr = w + o * in;
            for (long i = 0; i < in; ++i) s += wr[i] * cur[i];
            nxt[o] = (l < L - 1) ? act_eval(act, s) : s;
        }
        cur.swap(nxt);
    }
    std::copy(cur.begin(), cur.end(), output.begin());
}

std::vector<double> DenseNet::forward1(std::span<const double> input) const {
    std::vector<double> out(out_dim());
    forward(input, out);
    return out;
}

MatD net_forward(const DenseNet& net, const MatD& X, NetTape* tape) {
    net.check_params();
    if (X.cols != net.in_dim()) throw DimensionError("net_forward input width", net.in_dim(), X.cols);
    long L = net.num_layers();
    if (tape) {
        tape->input = X;
        tape->pre.clear();
        tape->acts.clear();
        tape->pre.reserve(L - 1);
        tape->acts.reserve(L - 1);
    }
    MatD cur = X;
    for (long l = 0; l < L; ++l) {
        long in = net.widths[l], out = net.widths[l + 1];
        MatD z(cur.rows, out);
        {
            CMapMat W(net.params.data() + net.weight_offset(l), out, in);
            CMapVec b(net.params.data() + net.bias_offset(l), out);
            CMapMat A(cur.data.data(), cur.rows, in);
            MapMat Z(z.data.data(), z.rows, z.cols);
            Z.noalias() = A * W.transpose();
            Z.rowwise() += b.transpose();
            if (!Z.allFinite()) throw NonFiniteError("net_forward", static_cast<int>(l));
        }
        if (l < L - 1) {
            if (tape) tape->pre.push_back(z);
            apply_act(net.act, z);
            if (tape) tape->acts.push_back(z);
        }
        cur = std::move(z);
    }
    return cur;
}

void net_backward(const DenseNet& net, const NetTape& tape, const MatD& dY,
                  std::span<double> param_grad, MatD* dX) {
    net.check_params();
    if (static_cast<long>(param_grad.size()) != static_cast<long>(net.params.size()))
        throw DimensionError("net_backward param_grad", static_cast<long>(net.params.size()),
                             static_cast<long>(param_grad.size()));
    long L = net.num_layers();
    if (dY.cols != net.out_dim()) throw DimensionError("net_backward dY width", net.out_dim(), dY.cols);
    long n = dY.rows;

    MatD dz = dY;
    for (long l = L - 1; l >= 0; --l) {
        long in = net.widths[l], out = net.widths[l + 1];
        const MatD& a_in = (l == 0) ? tape.input : tape.acts[l - 1];
        {
            CMapMat A(a_in.data.data(), n, in);
            CMapMat dZ(dz.data.data(), n, out);
            MapMat gW(param_grad.data() + net.weight_offset(l), out, in);
            MapVec gb(param_grad.data() + net.bias_offset(l), out);
            gW.noalias() += dZ.transpose() * A;
            gb.noalias() += dZ.colwise().sum().transpose();
        }
        bool need_da = (l > 0) || (dX != nullptr);
        if (!need_da) break;
        MatD da(n, in);
        {
            CMapMat W(net.params.data() + net.weight_offset(l), out, in);
            CMapMat dZ(dz.data.data(), n, out);
            MapMat dA(da.data.data(), n, in);
            dA.noalias() = dZ * W;
        }
        if (l == 0) {
            if (dX) *dX = std::move(da);
            break;
        }
        const MatD& pre = tape.pre[l - 1];
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= act_deriv(net.act, pre.data[i]);
        dz = std::move(da);
    }
}

GradResult net_grad(const DenseNet& net, const LossHead& loss_head, std::span<const double> input) {
    if (static_cast<long>(input.size()) != net.in_dim())
        throw DimensionError("net_grad input width", net.in_dim(), static_cast<long>(input.size()));
    MatD X(1, net.in_dim());
    X.set_row(0, input);
    NetTape tape;
    MatD Y = net_forward(net, X, &tape);
    MatD dY(1, net.out_dim());
    GradResult res;
    res.loss = loss_head(Y.row(0), dY.row(0));
    res.param_grad.assign(net.params.size(), 0.0);
    MatD dX;
    net_backward(net, tape, dY, res.param_grad, &dX);
    res.input_grad.assign(dX.data.begin(), dX.data.end());
    if (!all_finite(std::span<const double>(res.param_grad)) || !all_finite(std::span<const double>(res.input_grad)))
        throw NonFiniteError("net_grad");
    return res;
}

Optimizer Optimizer::sgd(double lr) {
    Optimizer o;
    o.kind = Kind::sgd;
    o.lr = lr;
    return o;
}

Optimizer Optimizer::adam(double lr) {
    Optimizer o;
    o.kind = Kind::adam;
    o.lr = lr;
    return o;
}

void Optimizer::step(std::span<double> params, std::span<double> grad) {
    if (params.size() != grad.size())
        throw DimensionError("optimizer_step grad", static_cast<long>(params.size()), static_cast<long>(grad.size()));
    if (grad_clip > 0.0) {
        double gn = std::sqrt(squared_norm(grad));
        if (gn > grad_clip) {
            double scale = grad_clip / gn;
            for (double& g : grad) g *= scale;
        }
    }
    if (kind == Kind::sgd) {
        for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
        ++t;
        return;
    }
    if (m.empty()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
    }
    if (m.size() != params.size())
        throw DimensionError("optimizer moment state", static_cast<long>(params.size()), static_cast<long>(m.size()));
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void ema_update(std::span<double> target, std::span<const double> online, double rate) {
    if (rate < 0.0 || rate > 1.0) throw DomainError(strfmt("ema rate %g outside [0,1]", rate));
    if (target.size() != online.size())
        throw DimensionError("ema_update", static_cast<long>(target.size()), static_cast<long>(online.size()));
    for (size_t i = 0; i < target.size(); ++i) target[i] += rate * (online[i] - target[i]);
}

FourierTimeEmbedding FourierTimeEmbedding::make(long dim) {
    if (dim <= 0 || dim % 2 != 0) throw DomainError(strfmt("fourier embedding dim %ld must be even and positive", dim));
    FourierTimeEmbedding fe;
    fe.dim = dim;
    long half = dim / 2;
    fe.freqs.resize(half);
    for (long i = 0; i < half; ++i) {
        double u = (half == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(half - 1);
        fe.freqs[i] = std::pow(10.0, 4.0 * u);  // geometric over [1, 1e4]
    }
    return fe;
}

void FourierTimeEmbedding::embed(double t, std::span<double> out) const {
    if (static_cast<long>(out.size()) != dim)
        throw DimensionError("fourier embed output", dim, static_cast<long>(out.size()));
    for (long i = 0; i < dim / 2; ++i) {
        out[2 * i] = std::sin(freqs[i] * t);
        out[2 * i + 1] = std::cos(freqs[i] * t);
    }
}

}  // namespace diffrl
