#include "diffrl/scorefield.hpp"

namespace diffrl {

Head head_from_name(std::string_view name) {
    if (name == "score") return Head::score;
    if (name == "epsilon" || name == "eps") return Head::epsilon;
    if (name == "velocity" || name == "v") return Head::velocity;
    throw FormatError(strfmt("unknown head '%.*s'", static_cast<int>(name.size()), name.data()));
}

const char* head_name(Head h) {
    switch (h) {
        case Head::score: return "score";
        case Head::epsilon: return "epsilon";
        case Head::velocity: return "velocity";
    }
    return "?";
}

ScoreCoeffs score_coeffs(Head h, const NoiseSchedule& sch, double t) {
    switch (h) {
        case Head::score:
            return {1.0, 0.0};
        case Head::epsilon: {
            double s = sch.sigma(t);
            if (s < 1e-12) throw DomainError(strfmt("epsilon head singular at t=%g", t));
            return {-1.0 / s, 0.0};
        }
        case Head::velocity: {
            // v = alpha_dot*x0hat + sigma_dot*eps  =>
            // score = (alpha_dot/alpha * x - v) / D,  D = sigma*sigma_dot - sigma^2*alpha_dot/alpha
            double a = sch.alpha(t), ad = sch.alpha_dot(t);
            double s = sch.sigma(t), sd = sch.sigma_dot(t);  // throws at t=0
            double D = s * sd - s * s * ad / a;
            if (std::abs(D) < 1e-12) throw DomainError(strfmt("velocity head singular at t=%g", t));
            return {-1.0 / D, (ad / a) / D};
        }
    }
    return {1.0, 0.0};
}

void convert_head(std::span<const double> in, Head from, Head to, const NoiseSchedule& sch,
                  std::span<const double> x_t, double t, std::span<double> out) {
    if (in.size() != x_t.size() || out.size() != in.size())
        throw DimensionError("convert_head", static_cast<long>(in.size()), static_cast<long>(out.size()));
    if (from == to) {
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    ScoreCoeffs cf = score_coeffs(from, sch, t);
    ScoreCoeffs ct = score_coeffs(to, sch, t);
    for (size_t i = 0; i < in.size(); ++i) {
        double s = cf.A * in[i] + cf.B * x_t[i];
        out[i] = (s - ct.B * x_t[i]) / ct.A;
    }
}

ScoreField ScoreField::make(long sample_dim, long condition_dim, const std::vector<long>& hidden,
                            Activation act, Head head, long embed_dim, Rng& rng) {
    ScoreField f;
    f.sample_dim = sample_dim;
    f.condition_dim = condition_dim;
    f.head = head;
    f.time_embed = FourierTimeEmbedding::make(embed_dim);
    std::vector<long> widths;
    widths.push_back(sample_dim + embed_dim + condition_dim);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(sample_dim);
    f.net = DenseNet::make(std::move(widths), act, rng);
    return f;
}

MatD ScoreField::build_input(const MatD& x, std::span<const double> t, const MatD& cond) const {
    if (x.cols != sample_dim) throw DimensionError("score field sample dim", sample_dim, x.cols);
    if (static_cast<long>(t.size()) != x.rows)
        throw DimensionError("score field time count", x.rows, static_cast<long>(t.size()));
    if (cond.rows != x.rows || cond.cols != condition_dim)
        throw DimensionError("score field condition dim", condition_dim, cond.cols);
    MatD in(x.rows, input_dim());
    std::vector<double> emb(time_embed.dim);
    for (long i = 0; i < x.rows; ++i) {
        double* row = in.data.data() + static_cast<size_t>(i) * in.cols;
        std::copy(x.row(i).begin(), x.row(i).end(), row);
        time_embed.embed(t[i], {emb.data(), emb.size()});
        std::copy(emb.begin(), emb.end(), row + sample_dim);
        if (condition_dim > 0) std::copy(cond.row(i).begin(), cond.row(i).end(), row + sample_dim + time_embed.dim);
    }
    return in;
}

MatD ScoreField::raw(const MatD& x, std::span<const double> t, const MatD& cond, NetTape* tape) const {
    MatD in = build_input(x, t, cond);
    return net_forward(net, in, tape);
}

MatD ScoreField::score(const MatD& x, std::span<const double> t, const MatD& cond,
                       const NoiseSchedule& sch) const {
    MatD r = raw(x, t, cond);
    for (long i = 0; i < r.rows; ++i) {
        ScoreCoeffs c = score_coeffs(head, sch, t[i]);
        for (long j = 0; j < r.cols; ++j) r(i, j) = c.A * r(i, j) + c.B * x(i, j);
    }
    return r;
}

std::vector<double> ScoreField::score1(std::span<const double> x, double t, std::span<const double> cond,
                                       const NoiseSchedule& sch) const {
    MatD xm(1, sample_dim);
    xm.set_row(0, x);
    MatD cm(1, condition_dim);
    if (condition_dim > 0) cm.set_row(0, cond);
    double tt = t;
    MatD s = score(xm, {&tt, 1}, cm, sch);
    return {s.data.begin(), s.data.end()};
}

}  // namespace diffrl
