#pragma once

#include <cmath>

#include "scprior/body_model.hpp"
#include "scprior/common.hpp"

namespace scprior {

// Noise schedule tables for t in [1, T]; alpha_bar(0) is defined as 1 so the
// final DDIM step lands on the clean sample.
struct DiffusionSchedule {
    long T = 1000;
    VecX beta;       // beta[t-1] = beta_t
    VecX alpha;      // 1 - beta_t
    VecX alpha_bar;  // prod_{s<=t} alpha_s

    double alpha_bar_at(long t) const {
        require(t >= 0 && t <= T, "schedule: t = " + std::to_string(t) + " outside [0, " +
                                      std::to_string(T) + "]");
        return t == 0 ? 1.0 : alpha_bar[t - 1];
    }

    // The 0.999 floor on alpha_bar(1) is calibrated for the production step
    // counts; under the exact cosine formula alpha_bar(1) ~ 1 - 3.5/T, which
    // drops below 0.999 for very short schedules (e.g. T = 50).
    void validate() const {
        require(T >= 1 && beta.size() == T && alpha.size() == T && alpha_bar.size() == T,
                "schedule: inconsistent table sizes");
        if (T >= 200)
            require(alpha_bar[0] > 0.999, "schedule: alpha_bar(1) must exceed 0.999");
        double prev = 1.0;
        for (long t = 0; t < T; ++t) {
            require(beta[t] > 0 && beta[t] <= 0.999, "schedule: beta out of (0, 0.999]");
            require(alpha_bar[t] < prev, "schedule: alpha_bar must decrease strictly");
            prev = alpha_bar[t];
        }
    }
};

inline DiffusionSchedule cosine_schedule(long T = 1000, double s = 0.008) {
    require(T >= 1, "cosine_schedule: T must be at least 1");
    DiffusionSchedule sch;
    sch.T = T;
    sch.beta.resize(T);
    sch.alpha.resize(T);
    sch.alpha_bar.resize(T);
    auto f = [&](double t) {
        const double arg = ((t / static_cast<double>(T) + s) / (1.0 + s)) * M_PI / 2.0;
        const double c = std::cos(arg);
        return c * c;
    };
    const double f0 = f(0.0);
    double prev_bar = 1.0;
    for (long t = 1; t <= T; ++t) {
        const double bar = f(static_cast<double>(t)) / f0;
        double beta = 1.0 - bar / prev_bar;
        beta = std::min(beta, 0.999);
        sch.beta[t - 1] = beta;
        sch.alpha[t - 1] = 1.0 - beta;
        // rebuild the cumulative product from the clipped betas so the three
        // tables stay mutually consistent
        sch.alpha_bar[t - 1] = (t == 1 ? 1.0 : sch.alpha_bar[t - 2]) * (1.0 - beta);
        prev_bar = bar;
    }
    sch.validate();
    return sch;
}

// forward noising: X_t = sqrt(abar_t) X0 + sqrt(1 - abar_t) eps
inline VecX noise_pose(const VecX& x0, long t, const VecX& eps, const DiffusionSchedule& sch) {
    require(t >= 1 && t <= sch.T, "noise: t = " + std::to_string(t) + " outside [1, T]");
    require(x0.size() == eps.size(), "noise: x0 and eps must have equal length");
    const double ab = sch.alpha_bar_at(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// Eq. (2) shape-conditional perturbation: with probability p the conditioning
// becomes I + s_I * eps, otherwise I itself.
inline VecX perturb_shape(const VecX& identity, double p, double s_scale, Rng& rng) {
    require(p >= 0.0 && p <= 1.0, "perturb_shape: probability outside [0, 1]");
    const double coin = rng.uniform();
    VecX out = identity;
    if (coin < p)
        for (long i = 0; i < out.size(); ++i) out[i] += s_scale * rng.normal();
    return out;
}

}  // namespace scprior
