#pragma once

#include <string_view>

#include "diffrl/errors.hpp"

namespace diffrl {

enum class ScheduleKind { cosine, linear_vp };

// Variance-preserving noise schedule on t in [0,1]: clean data at t=0, pure
// noise at t=1, with alpha(t)^2 + sigma(t)^2 = 1.
//
// cosine: alphabar(t) = cos^2(phi(t)) / cos^2(phi(0)) with the angle running
// linearly from phi0 = (s/(1+s))*pi/2 (s=0.008) to pi/2 - 5e-4. The endpoint
// sits a hair below pi/2 so alpha(1) ~ 5e-4 stays positive: the sampler grid
// includes t=1, where posterior-mean inversion divides by alpha(t) and the
// SDE drift carries alpha_dot/alpha. This is the usual discrete-time beta
// clip expressed in continuous time.
//
// linear_vp: beta(t) linear from 0.1 to 30, alpha = exp(-1/2 int beta).
// beta_max = 30 puts alpha(1) ~ 5.4e-4, inside the alpha(1) <= 1e-3 envelope
// (20 would leave alpha(1) ~ 6.6e-3).
class NoiseSchedule {
public:
    static NoiseSchedule cosine();
    static NoiseSchedule linear_vp();
    static NoiseSchedule from_name(std::string_view name);

    ScheduleKind kind() const { return kind_; }
    const char* name() const;

    double alpha(double t) const;
    double sigma(double t) const;
    double alpha_dot(double t) const;
    // sigma_dot = -alpha*alpha_dot/sigma; singular at t=0 (sigma=0) -> DomainError.
    double sigma_dot(double t) const;

private:
    NoiseSchedule() = default;
    static void check_t(double t);

    ScheduleKind kind_ = ScheduleKind::cosine;
    // cosine
    double phi0_ = 0.0, phi1_ = 0.0, cos0_ = 1.0;
    // linear_vp
    double b0_ = 0.1, b1_ = 30.0;
};

}  // namespace diffrl
