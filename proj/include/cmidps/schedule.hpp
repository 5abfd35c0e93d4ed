#pragma once

#include <Eigen/Dense>

#include <vector>

namespace cmidps {

enum class ScheduleKind { linear };

/// Discretized variance-preserving noise schedule.
///
/// Indexing convention, used everywhere in this library: reverse steps are
/// 1-based, t in {1..N}; t = 0 denotes clean data. Accessors taking a step
/// expect that range; `alpha_bar(0)` is defined as 1 so the t = 1 update can
/// use the common formulas unchanged. The per-step sampler noise is the
/// posterior choice sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t,
/// which makes sigma_1 = 0: no noise is injected when producing the final
/// sample.
class NoiseSchedule {
  public:
    NoiseSchedule(std::vector<double> betas);

    int n_steps() const { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_[checked(t) - 1]; }
    double alpha(int t) const { return alphas_[checked(t) - 1]; }
    double sampler_std(int t) const { return sampler_stds_[checked(t) - 1]; }

    /// abar_t = prod_{j<=t} alpha_j; abar_0 = 1.
    double alpha_bar(int t) const;

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }
    const std::vector<double>& sampler_stds() const { return sampler_stds_; }

  private:
    int checked(int t) const;

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<double> sampler_stds_;
};

/// Builds an N-step schedule with betas interpolated linearly from beta_min
/// to beta_max inclusive (a single step uses beta_min).
NoiseSchedule build_schedule(ScheduleKind kind, int n_steps, double beta_min,
                             double beta_max);

/// Forward marginal draw: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Eigen::VectorXd forward_marginal(const NoiseSchedule& schedule,
                                 const Eigen::VectorXd& x0, int t,
                                 const Eigen::VectorXd& eps);

}  // namespace cmidps
