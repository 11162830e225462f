#include "diffrl/diffusion.hpp"

#include <cmath>

namespace diffrl {

void forward_perturb(const NoiseSchedule& sch, std::span<const double> x0, double t,
                     std::span<const double> noise, std::span<double> out) {
    if (x0.size() != noise.size() || x0.size() != out.size())
        throw DimensionError("forward_perturb", static_cast<long>(x0.size()), static_cast<long>(out.size()));
    double a = sch.alpha(t), s = sch.sigma(t);  // alpha() validates t
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * noise[i];
}

void conditional_score(const NoiseSchedule& sch, std::span<const double> x_t, std::span<const double> x0,
                       double t, std::span<double> out) {
    if (x_t.size() != x0.size() || x_t.size() != out.size())
        throw DimensionError("conditional_score", static_cast<long>(x_t.size()), static_cast<long>(out.size()));
    double a = sch.alpha(t), s = sch.sigma(t);
    if (s < 1e-12) throw DomainError(strfmt("conditional_score singular at t=%g", t));
    double inv = 1.0 / (s * s);
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = -(x_t[i] - a * x0[i]) * inv;
}

std::vector<double> posterior_mean(const NoiseSchedule& sch, std::span<const double> x_t, double t,
                                   std::span<const double> eps_pred) {
    if (x_t.size() != eps_pred.size())
        throw DimensionError("posterior_mean", static_cast<long>(x_t.size()), static_cast<long>(eps_pred.size()));
    double a = sch.alpha(t), s = sch.sigma(t);
    if (a < 1e-6) throw DomainError(strfmt("posterior_mean singular: alpha(%g)=%g", t, a));
    std::vector<double> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - s * eps_pred[i]) / a;
    return out;
}

void langevin_step(std::span<const double> x, std::span<const double> score, double step_size,
                   std::span<const double> noise, std::span<double> out) {
    if (step_size < 0.0) throw DomainError(strfmt("langevin step_size %g < 0", step_size));
    if (x.size() != score.size() || x.size() != noise.size() || x.size() != out.size())
        throw DimensionError("langevin_step", static_cast<long>(x.size()), static_cast<long>(out.size()));
    double nscale = std::sqrt(2.0 * step_size);
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + step_size * score[i] + nscale * noise[i];
}

SamplerConfig::Mode SamplerConfig::mode_from_name(std::string_view name) {
    if (name == "sde") return Mode::sde;
    if (name == "ode") return Mode::ode;
    if (name == "ddpm_ancestral" || name == "ancestral") return Mode::ddpm_ancestral;
    if (name == "langevin") return Mode::langevin;
    throw FormatError(strfmt("unknown sampler mode '%.*s'", static_cast<int>(name.size()), name.data()));
}

const char* SamplerConfig::mode_name() const {
    switch (mode) {
        case Mode::sde: return "sde";
        case Mode::ode: return "ode";
        case Mode::ddpm_ancestral: return "ddpm_ancestral";
        case Mode::langevin: return "langevin";
    }
    return "?";
}

void SamplerConfig::validate() const {
    if (num_steps < 1) throw DomainError(strfmt("num_steps %ld < 1", num_steps));
    if (eta < 0.0) throw DomainError(strfmt("eta %g < 0", eta));
    if (!(t_min > 0.0 && t_min <= 0.5)) throw DomainError(strfmt("t_min %g outside (0, 0.5]", t_min));
    if (std_floor < 0.0) throw DomainError("std_floor < 0");
    if (langevin_inner < 1) throw DomainError("langevin_inner < 1");
    if (langevin_scale <= 0.0) throw DomainError("langevin_scale <= 0");
    if (!time_grid.empty()) {
        if (static_cast<long>(time_grid.size()) != num_steps + 1)
            throw DimensionError("time_grid length", num_steps + 1, static_cast<long>(time_grid.size()));
        if (time_grid.front() != 1.0 || time_grid.back() != 0.0)
            throw DomainError("time_grid must start at 1 and end at 0");
        for (size_t i = 0; i + 1 < time_grid.size(); ++i)
            if (!(time_grid[i] > time_grid[i + 1])) throw DomainError("time_grid must be strictly decreasing");
    }
}

std::vector<double> SamplerConfig::grid() const {
    validate();
    if (!time_grid.empty()) return time_grid;
    std::vector<double> g(num_steps + 1);
    for (long k = 0; k <= num_steps; ++k)
        g[k] = 1.0 - static_cast<double>(k) / static_cast<double>(num_steps);
    g[num_steps] = 0.0;
    return g;
}

double chain_log_prob(const DenoisingTrajectory& tr) {
    static const double kLog2Pi = std::log(2.0 * 3.14159265358979323846);
    double lp = 0.0;
    long d = tr.states.cols;
    for (long k = 0; k < tr.steps(); ++k) {
        double s = tr.stds[k];
        if (!(s > 0.0)) throw DomainError(strfmt("chain_log_prob: step %ld has std %g", k, s));
        double inv2 = 1.0 / (2.0 * s * s);
        double q = 0.0;
        for (long j = 0; j < d; ++j) {
            double dlt = tr.states(k + 1, j) - tr.mean(k, j);
            q += dlt * dlt;
        }
        lp += -q * inv2 - 0.5 * static_cast<double>(d) * (kLog2Pi + 2.0 * std::log(s));
    }
    return lp;
}

StepAffine step_affine(const ScoreField& field, const NoiseSchedule& sch, const SamplerConfig& cfg,
                       double t_hi, double t_lo) {
    double t_e = clampd(t_hi, cfg.t_min, 1.0);
    ScoreCoeffs c = score_coeffs(field.head, sch, t_e);
    StepAffine sc;
    if (cfg.mode == SamplerConfig::Mode::ddpm_ancestral) {
        double ah = sch.alpha(t_e), sh = sch.sigma(t_e);
        double al = sch.alpha(t_lo), sl = sch.sigma(t_lo);
        double sh2 = sh * sh, sl2 = sl * sl;
        double s2_hl = std::max(sh2 - (ah / al) * (ah / al) * sl2, 0.0);
        double c_x = (ah / al) * sl2 / sh2;
        double c_0 = al * s2_hl / sh2;
        double var = sl2 * s2_hl / sh2;
        sc.clamp_path = true;
        sc.cx = c_x;
        sc.cu = c_0;
        // x0hat = (x - sh*eps)/ah with eps = -sh*(A*raw + B*x)
        sc.u = (1.0 + sh2 * c.B) / ah;
        sc.w = sh2 * c.A / ah;
        sc.std = std::sqrt(std::max(var, 0.0));
        if (cfg.std_floor > 0.0) sc.std = std::max(sc.std, cfg.std_floor);
    } else {
        // Euler-Maruyama on the reverse SDE; eta=0 is the probability-flow ODE.
        double dt = t_lo - t_hi;  // negative
        double a = sch.alpha(t_e), ad = sch.alpha_dot(t_e);
        double s = sch.sigma(t_e), sd = sch.sigma_dot(t_e);
        double f = ad / a;
        double g2 = 2.0 * (s * sd - s * s * f);
        double eta = (cfg.mode == SamplerConfig::Mode::ode) ? 0.0 : cfg.eta;
        double k = g2 / 2.0 + eta;
        sc.cx = 1.0 + dt * (f - k * c.B);
        sc.cw = -dt * k * c.A;
        sc.std = std::sqrt(std::max(2.0 * eta * (-dt), 0.0));
    }
    return sc;
}

MatD sample(const ScoreField& field, const MatD& cond, const NoiseSchedule& sch, const SamplerConfig& cfg,
            Rng& rng, const GuidanceFn* guidance, std::vector<DenoisingTrajectory>* trajectories) {
    cfg.validate();
    std::vector<double> grid = cfg.grid();
    long n = cond.rows, d = field.sample_dim;
    long T = static_cast<long>(grid.size()) - 1;
    if (cond.cols != field.condition_dim)
        throw DimensionError("sample condition dim", field.condition_dim, cond.cols);

    MatD x(n, d);
    rng.fill_normal({x.data.data(), x.data.size()});

    if (trajectories) {
        trajectories->assign(n, {});
        for (long i = 0; i < n; ++i) {
            auto& tr = (*trajectories)[i];
            tr.times = grid;
            tr.states = MatD(T + 1, d);
            tr.model_out = MatD(T, d);
            tr.noise = MatD(T, d);
            tr.mean = MatD(T, d);
            tr.stds.assign(T, 0.0);
            tr.states.set_row(0, x.row(i));
        }
    }

    MatD noise(n, d), score(n, d);
    std::vector<double> tvec(n);

    auto eval_score = [&](double t_e) -> MatD {
        std::fill(tvec.begin(), tvec.end(), t_e);
        MatD raw = field.raw(x, {tvec.data(), tvec.size()}, cond);
        ScoreCoeffs c = score_coeffs(field.head, sch, t_e);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < d; ++j) score(i, j) = c.A * raw(i, j) + c.B * x(i, j);
        if (guidance) (*guidance)(t_e, x, score);
        return raw;
    };

    if (cfg.mode == SamplerConfig::Mode::langevin) {
        // Annealed Langevin: at each grid level, a few unadjusted steps
        // targeting that level's marginal.
        for (long k = 0; k < T; ++k) {
            double t_e = clampd(grid[k + 1], cfg.t_min, 1.0);
            double step = cfg.langevin_scale * sch.sigma(t_e) * sch.sigma(t_e);
            double nscale = std::sqrt(2.0 * step);
            MatD raw;
            for (long it = 0; it < cfg.langevin_inner; ++it) {
                raw = eval_score(t_e);
                rng.fill_normal({noise.data.data(), noise.data.size()});
                for (long i = 0; i < n; ++i)
                    for (long j = 0; j < d; ++j) {
                        double mean = x(i, j) + step * score(i, j);
                        if (trajectories && it == cfg.langevin_inner - 1) {
                            auto& tr = (*trajectories)[i];
                            tr.model_out(k, j) = raw(i, j);
                            tr.noise(k, j) = noise(i, j);
                            tr.mean(k, j) = mean;
                            tr.stds[k] = nscale > 0.0 ? nscale : cfg.std_floor;
                        }
                        x(i, j) = mean + nscale * noise(i, j);
                    }
            }
            if (!all_finite(x)) throw NonFiniteError(strfmt("sampler step %ld", k), static_cast<int>(k));
            if (trajectories)
                for (long i = 0; i < n; ++i) (*trajectories)[i].states.set_row(k + 1, x.row(i));
        }
        return x;
    }

    for (long k = 0; k < T; ++k) {
        double t_hi = grid[k], t_lo = grid[k + 1];
        double t_e = clampd(t_hi, cfg.t_min, 1.0);
        MatD raw = eval_score(t_e);
        StepAffine sc = step_affine(field, sch, cfg, t_hi, t_lo);
        rng.fill_normal({noise.data.data(), noise.data.size()});

        // The update is written in terms of the (possibly guided) score, not
        // the raw output, so guidance flows through every mode.
        bool ancestral = (cfg.mode == SamplerConfig::Mode::ddpm_ancestral);
        double ah = sch.alpha(t_e), sh = sch.sigma(t_e);
        double dt = t_lo - t_hi;
        double f = 0.0, kdrift = 0.0;
        if (!ancestral) {
            f = sch.alpha_dot(t_e) / ah;
            double g2 = 2.0 * (sh * sch.sigma_dot(t_e) - sh * sh * f);
            kdrift = g2 / 2.0 + (cfg.mode == SamplerConfig::Mode::ode ? 0.0 : cfg.eta);
        }

        for (long i = 0; i < n; ++i) {
            for (long j = 0; j < d; ++j) {
                double mean;
                if (ancestral) {
                    double x0hat = (x(i, j) + sh * sh * score(i, j)) / ah;
                    if (cfg.x0_clip > 0.0) x0hat = clampd(x0hat, -cfg.x0_clip, cfg.x0_clip);
                    mean = sc.cx * x(i, j) + sc.cu * x0hat;
                } else {
                    mean = x(i, j) + dt * (f * x(i, j) - kdrift * score(i, j));
                }
                double newx = mean + sc.std * noise(i, j);
                if (trajectories) {
                    auto& tr = (*trajectories)[i];
                    tr.model_out(k, j) = raw(i, j);
                    tr.noise(k, j) = noise(i, j);
                    tr.mean(k, j) = mean;
                    tr.stds[k] = sc.std > 0.0 ? sc.std : cfg.std_floor;
                }
                x(i, j) = newx;
            }
        }
        if (!all_finite(x)) throw NonFiniteError(strfmt("sampler step %ld", k), static_cast<int>(k));
        if (trajectories)
            for (long i = 0; i < n; ++i) (*trajectories)[i].states.set_row(k + 1, x.row(i));
    }
    return x;
}

ChainResult sample_chain_taped(const ScoreField& field, const MatD& cond, const NoiseSchedule& sch,
                               const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.mode == SamplerConfig::Mode::langevin)
        throw DomainError("langevin sampling has no differentiable tape");
    std::vector<double> grid = cfg.grid();
    long n = cond.rows, d = field.sample_dim;
    long T = static_cast<long>(grid.size()) - 1;

    ChainResult res;
    res.steps.resize(T);
    MatD x(n, d);
    rng.fill_normal({x.data.data(), x.data.size()});
    MatD noise(n, d);
    std::vector<double> tvec(n);

    for (long k = 0; k < T; ++k) {
        double t_hi = grid[k], t_lo = grid[k + 1];
        double t_e = clampd(t_hi, cfg.t_min, 1.0);
        ChainStep& st = res.steps[k];
        st.t_eval = t_e;
        std::fill(tvec.begin(), tvec.end(), t_e);
        MatD raw = field.raw(x, {tvec.data(), tvec.size()}, cond, &st.tape);
        StepAffine sc = step_affine(field, sch, cfg, t_hi, t_lo);
        st.cx = sc.cx;
        st.cu = sc.cu;
        st.cw = sc.cw;
        st.u = sc.u;
        st.w = sc.w;
        rng.fill_normal({noise.data.data(), noise.data.size()});

        if (sc.clamp_path) {
            st.clipped.assign(static_cast<size_t>(n) * d, 0);
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < d; ++j) {
                    double x0hat = sc.u * x(i, j) + sc.w * raw(i, j);
                    if (cfg.x0_clip > 0.0 && (x0hat < -cfg.x0_clip || x0hat > cfg.x0_clip)) {
                        st.clipped[static_cast<size_t>(i) * d + j] = 1;
                        x0hat = clampd(x0hat, -cfg.x0_clip, cfg.x0_clip);
                    }
                    x(i, j) = sc.cx * x(i, j) + sc.cu * x0hat + sc.std * noise(i, j);
                }
        } else {
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < d; ++j)
                    x(i, j) = sc.cx * x(i, j) + sc.cw * raw(i, j) + sc.std * noise(i, j);
        }
        if (!all_finite(x)) throw NonFiniteError(strfmt("taped sampler step %ld", k), static_cast<int>(k));
    }
    res.x0 = std::move(x);
    return res;
}

void chain_backward(const ScoreField& field, const ChainResult& chain, const MatD& dX0,
                    std::span<double> param_grad) {
    long n = dX0.rows, d = dX0.cols;
    MatD dx = dX0;
    for (long k = static_cast<long>(chain.steps.size()) - 1; k >= 0; --k) {
        const ChainStep& st = chain.steps[k];
        MatD draw(n, d), dxhi(n, d);
        if (!st.clipped.empty()) {
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < d; ++j) {
                    double m = st.clipped[static_cast<size_t>(i) * d + j] ? 0.0 : 1.0;
                    double dx0hat = st.cu * dx(i, j) * m;
                    draw(i, j) = st.w * dx0hat;
                    dxhi(i, j) = st.cx * dx(i, j) + st.u * dx0hat;
                }
        } else {
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < d; ++j) {
                    draw(i, j) = st.cw * dx(i, j);
                    dxhi(i, j) = st.cx * dx(i, j);
                }
        }
        MatD dinput;
        net_backward(field.net, st.tape, draw, param_grad, &dinput);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < d; ++j) dxhi(i, j) += dinput(i, j);
        if (!all_finite(dxhi)) throw NonFiniteError(strfmt("chain backward step %ld", k), static_cast<int>(k));
        dx = std::move(dxhi);
    }
}

double score_regression_loss(const ScoreField& field, const NoiseSchedule& sch,
                             const ScoreRegressionBatch& batch, std::span<double> param_grad) {
    long n = batch.x_t.rows, d = batch.x_t.cols;
    if (n == 0) throw DomainError("score_regression_loss: empty batch");
    if (batch.target.rows != n || batch.target.cols != d)
        throw DimensionError("score regression target", n * d, batch.target.rows * batch.target.cols);
    if (!batch.weight.empty() && static_cast<long>(batch.weight.size()) != n)
        throw DimensionError("score regression weights", n, static_cast<long>(batch.weight.size()));

    NetTape tape;
    MatD raw = field.raw(batch.x_t, {batch.t.data(), batch.t.size()}, batch.cond, &tape);
    MatD draw(n, field.sample_dim);
    double loss = 0.0;
    for (long i = 0; i < n; ++i) {
        ScoreCoeffs c = score_coeffs(field.head, sch, batch.t[i]);
        double w = batch.weight.empty() ? 1.0 / static_cast<double>(n) : batch.weight[i];
        for (long j = 0; j < d; ++j) {
            double s = c.A * raw(i, j) + c.B * batch.x_t(i, j);
            double e = s - batch.target(i, j);
            loss += w * e * e;
            draw(i, j) = 2.0 * w * e * c.A;
        }
    }
    net_backward(field.net, tape, draw, param_grad, nullptr);
    return loss;
}

ScoreRegressionBatch build_score_matching_batch(const NoiseSchedule& sch, const MatD& x0, const MatD& cond,
                                                double t_min, Rng& rng) {
    long n = x0.rows, d = x0.cols;
    if (n == 0) throw DomainError("score matching: empty batch");
    if (cond.rows != n) throw DimensionError("score matching cond rows", n, cond.rows);
    ScoreRegressionBatch b;
    b.x_t = MatD(n, d);
    b.target = MatD(n, d);
    b.cond = cond;
    b.t.resize(n);
    for (long i = 0; i < n; ++i) {
        double t = rng.uniform(t_min, 1.0);
        b.t[i] = t;
        double a = sch.alpha(t), s = sch.sigma(t);
        for (long j = 0; j < d; ++j) {
            double eps = rng.normal();
            b.x_t(i, j) = a * x0(i, j) + s * eps;
            b.target(i, j) = -eps / s;  // the conditional score identity
        }
    }
    return b;
}

double score_matching_loss(const ScoreField& field, const NoiseSchedule& sch, const MatD& x0,
                           const MatD& cond, double t_min, Rng& rng, std::span<double> param_grad) {
    ScoreRegressionBatch b = build_score_matching_batch(sch, x0, cond, t_min, rng);
    return score_regression_loss(field, sch, b, param_grad);
}

}  // namespace diffrl
