#include "diffrl/schedule.hpp"

#include <cmath>

namespace diffrl {

static constexpr double kPi = 3.14159265358979323846;
static constexpr double kCosineS = 0.008;
static constexpr double kAngleCap = 5e-4;  // pi/2 - phi1

NoiseSchedule NoiseSchedule::cosine() {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::cosine;
    s.phi0_ = (kCosineS / (1.0 + kCosineS)) * kPi / 2.0;
    s.phi1_ = kPi / 2.0 - kAngleCap;
    s.cos0_ = std::cos(s.phi0_);
    return s;
}

NoiseSchedule NoiseSchedule::linear_vp() {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::linear_vp;
    s.b0_ = 0.1;
    s.b1_ = 30.0;
    return s;
}

NoiseSchedule NoiseSchedule::from_name(std::string_view name) {
    if (name == "cosine") return cosine();
    if (name == "linear_vp" || name == "linear") return linear_vp();
    throw FormatError(strfmt("unknown schedule '%.*s'", static_cast<int>(name.size()), name.data()));
}

const char* NoiseSchedule::name() const { return kind_ == ScheduleKind::cosine ? "cosine" : "linear_vp"; }

void NoiseSchedule::check_t(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError(strfmt("schedule time %g outside [0,1]", t));
}

double NoiseSchedule::alpha(double t) const {
    check_t(t);
    if (kind_ == ScheduleKind::cosine) {
        double phi = phi0_ + t * (phi1_ - phi0_);
        return std::cos(phi) / cos0_;
    }
    double B = b0_ * t + 0.5 * (b1_ - b0_) * t * t;  // int_0^t beta
    return std::exp(-0.5 * B);
}

double NoiseSchedule::sigma(double t) const {
    double a = alpha(t);
    double s2 = 1.0 - a * a;
    return s2 <= 0.0 ? 0.0 : std::sqrt(s2);
}

double NoiseSchedule::alpha_dot(double t) const {
    check_t(t);
    if (kind_ == ScheduleKind::cosine) {
        double phi = phi0_ + t * (phi1_ - phi0_);
        return -std::sin(phi) * (phi1_ - phi0_) / cos0_;
    }
    double beta = b0_ + (b1_ - b0_) * t;
    return -0.5 * beta * alpha(t);
}

double NoiseSchedule::sigma_dot(double t) const {
    double s = sigma(t);
    if (s < 1e-12) throw DomainError(strfmt("sigma_dot singular at t=%g (sigma=0)", t));
    return -alpha(t) * alpha_dot(t) / s;
}

}  // namespace diffrl
