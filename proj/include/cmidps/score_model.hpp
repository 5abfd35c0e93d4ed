#pragma once

#include "cmidps/rng.hpp"
#include "cmidps/schedule.hpp"
#include "cmidps/tensor3.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace cmidps {

/// Dense rank-3 paths (third tensor, exact CMI gradient) refuse dimensions
/// above this unless told otherwise.
inline constexpr int kDefaultDenseLimit = 64;

/// Score function of the diffused density p_t with optional higher-order
/// derivatives. Implementations are immutable and reentrant.
class ScoreModel {
  public:
    virtual ~ScoreModel() = default;

    virtual int dim() const = 0;
    virtual bool has_dense_hessian() const { return false; }
    virtual bool has_third_order() const { return false; }

    /// grad_x log p_t(x).
    virtual Eigen::VectorXd score(const Eigen::VectorXd& x, int t) const = 0;

    /// Dense Hessian of log p_t; symmetric.
    virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& x, int t) const;

    /// Hessian-vector product; defaults to the dense Hessian when available.
    virtual Eigen::VectorXd hvp(const Eigen::VectorXd& x, int t,
                                const Eigen::VectorXd& v) const;

    /// d-vector with k-th entry sum_{a,b} u_a T_{abk} v_b where T is the
    /// third derivative tensor of log p_t; equivalently the gradient in x of
    /// the scalar u' (hessian of log p_t) v.
    virtual Eigen::VectorXd third_bilinear_grad(const Eigen::VectorXd& x, int t,
                                                const Eigen::VectorXd& u,
                                                const Eigen::VectorXd& v) const;

    /// Full d x d x d third derivative tensor; only for small dimensions.
    /// Default assembles slices from third_bilinear_grad on basis vectors.
    virtual Tensor3 dense_third_tensor(const Eigen::VectorXd& x, int t,
                                       int dense_limit = kDefaultDenseLimit) const;
};

/// Mixture of Gaussians used as an analytic prior: every quantity of the
/// diffused density (score, Hessian, third derivatives) has a closed form,
/// so downstream formulas can be checked exactly.
class GaussianMixturePrior {
  public:
    GaussianMixturePrior(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                         std::vector<Eigen::MatrixXd> covariances);

    static GaussianMixturePrior standard_normal(int dim);

    int dim() const { return dim_; }
    int n_components() const { return static_cast<int>(weights_.size()); }
    const Eigen::VectorXd& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& means() const { return means_; }
    const std::vector<Eigen::MatrixXd>& covariances() const { return covs_; }

    Eigen::VectorXd sample(RngStream& rng) const;

  private:
    int dim_;
    Eigen::VectorXd weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<Eigen::MatrixXd> covs_;
    std::vector<Eigen::MatrixXd> cov_chols_;  // lower factors, for sampling
};

double gmm_log_density(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                       const Eigen::VectorXd& x, int t);

Eigen::VectorXd gmm_score(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                          const Eigen::VectorXd& x, int t);

Eigen::MatrixXd gmm_hessian(const GaussianMixturePrior& prior, const NoiseSchedule& schedule,
                            const Eigen::VectorXd& x, int t);

/// ScoreModel over a GaussianMixturePrior with exact derivatives up to third
/// order.
class GmmScoreModel : public ScoreModel {
  public:
    GmmScoreModel(GaussianMixturePrior prior, NoiseSchedule schedule);

    int dim() const override { return prior_.dim(); }
    bool has_dense_hessian() const override { return true; }
    bool has_third_order() const override { return true; }

    const GaussianMixturePrior& prior() const { return prior_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    double log_density(const Eigen::VectorXd& x, int t) const;
    Eigen::VectorXd score(const Eigen::VectorXd& x, int t) const override;
    Eigen::MatrixXd hessian(const Eigen::VectorXd& x, int t) const override;
    Eigen::VectorXd hvp(const Eigen::VectorXd& x, int t,
                        const Eigen::VectorXd& v) const override;
    Eigen::VectorXd third_bilinear_grad(const Eigen::VectorXd& x, int t,
                                        const Eigen::VectorXd& u,
                                        const Eigen::VectorXd& v) const override;
    Tensor3 dense_third_tensor(const Eigen::VectorXd& x, int t,
                               int dense_limit = kDefaultDenseLimit) const override;

  private:
    GaussianMixturePrior prior_;
    NoiseSchedule schedule_;
};

using ScoreFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)>;

/// Wraps a bare score function into a ScoreModel whose Hessian, HVP and
/// third-order contractions are central finite differences (accuracy O(h^2)).
class FiniteDiffScoreModel : public ScoreModel {
  public:
    FiniteDiffScoreModel(int dim, ScoreFn base_score, double h);

    int dim() const override { return dim_; }
    bool has_dense_hessian() const override { return true; }
    bool has_third_order() const override { return true; }

    Eigen::VectorXd score(const Eigen::VectorXd& x, int t) const override;
    Eigen::MatrixXd hessian(const Eigen::VectorXd& x, int t) const override;
    Eigen::VectorXd hvp(const Eigen::VectorXd& x, int t,
                        const Eigen::VectorXd& v) const override;
    Eigen::VectorXd third_bilinear_grad(const Eigen::VectorXd& x, int t,
                                        const Eigen::VectorXd& u,
                                        const Eigen::VectorXd& v) const override;

  private:
    int dim_;
    ScoreFn base_;
    double h_;
};

FiniteDiffScoreModel finite_diff_wrap(int dim, ScoreFn base_score, double h = 1e-4);

/// Tweedie denoised mean: (x_t + (1 - abar_t) * score(x_t, t)) / sqrt(abar_t).
Eigen::VectorXd tweedie_denoise(const ScoreModel& model, const NoiseSchedule& schedule,
                                const Eigen::VectorXd& x_t, int t);

}  // namespace cmidps
