#include "cmidps/schedule.hpp"

#include "cmidps/errors.hpp"

#include <cmath>
#include <string>

namespace cmidps {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ConfigError("schedule requires at least one step");
    const std::size_t n = betas_.size();
    alphas_.resize(n);
    alpha_bars_.resize(n);
    sampler_stds_.resize(n);
    double abar = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double b = betas_[i];
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError("beta at step " + std::to_string(i + 1) +
                              " = " + std::to_string(b) + " is outside (0,1)");
        alphas_[i] = 1.0 - b;
        const double abar_prev = abar;
        abar *= alphas_[i];
        alpha_bars_[i] = abar;
        sampler_stds_[i] = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * b);
    }
}

int NoiseSchedule::checked(int t) const {
    if (t < 1 || t > n_steps())
        throw StepIndexError("step index " + std::to_string(t) +
                             " outside 1.." + std::to_string(n_steps()));
    return t;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[checked(t) - 1];
}

NoiseSchedule build_schedule(ScheduleKind kind, int n_steps, double beta_min,
                             double beta_max) {
    if (kind != ScheduleKind::linear)
        throw ConfigError("unknown schedule kind");
    if (n_steps < 1)
        throw ConfigError("n_steps = " + std::to_string(n_steps) + ", must be >= 1");
    if (!(beta_min > 0.0))
        throw ConfigError("beta_min = " + std::to_string(beta_min) + ", must be > 0");
    if (!(beta_max < 1.0))
        throw ConfigError("beta_max = " + std::to_string(beta_max) + ", must be < 1");
    if (!(beta_min <= beta_max))
        throw ConfigError("beta_min = " + std::to_string(beta_min) +
                          " exceeds beta_max = " + std::to_string(beta_max));

    std::vector<double> betas(static_cast<std::size_t>(n_steps));
    if (n_steps == 1) {
        betas[0] = beta_min;
    } else {
        for (int i = 0; i < n_steps; ++i)
            betas[static_cast<std::size_t>(i)] =
                beta_min + (beta_max - beta_min) * static_cast<double>(i) /
                               static_cast<double>(n_steps - 1);
    }
    return NoiseSchedule(std::move(betas));
}

Eigen::VectorXd forward_marginal(const NoiseSchedule& schedule,
                                 const Eigen::VectorXd& x0, int t,
                                 const Eigen::VectorXd& eps) {
    if (x0.size() != eps.size())
        throw ShapeError("forward_marginal: x0 and eps dimensions differ");
    if (t < 1 || t > schedule.n_steps())
        throw StepIndexError("forward_marginal: step index " + std::to_string(t));
    const double abar = schedule.alpha_bar(t);
    return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

}  // namespace cmidps
