#pragma once

#include "cmidps/operators.hpp"
#include "cmidps/rng.hpp"
#include "cmidps/schedule.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace cmidps {

struct GaussianDist {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Exact posterior of a Gaussian prior under the linear-Gaussian likelihood
/// y = A x + n: cov = (C^{-1} + A' Sigma_n^{-1} A)^{-1},
/// mean = cov (C^{-1} mu + A' Sigma_n^{-1} y). Computed with Cholesky solves.
GaussianDist conjugate_gaussian_posterior(const GaussianDist& prior,
                                          const LinearOperator& a,
                                          const NoiseModel& noise,
                                          const Eigen::VectorXd& y);

/// Empirical moments of p(x0 | x_t) by self-normalized importance sampling
/// over prior draws, weighted by the forward kernel
/// N(x_t; sqrt(abar_t) x0, (1 - abar_t) I).
struct McMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    double effective_sample_size = 0.0;
    bool unreliable = false;  // effective sample size below 50
};

McMoments mc_posterior_moments(const std::function<Eigen::VectorXd(RngStream&)>& prior_sampler,
                               const NoiseSchedule& schedule, const Eigen::VectorXd& x_t,
                               int t, int n_samples, RngStream& rng);

/// Central finite-difference gradient of a scalar field.
Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h);

/// Reconstruction metrics. MSE is on the raw values; PSNR and SSIM follow the
/// [0,1]-range convention (inputs clamped before scoring). SSIM uses the
/// 11-tap Gaussian window (sigma 1.5, k1 = 0.01, k2 = 0.03), with windows
/// truncated and renormalized at image borders, and is only computed when
/// image dimensions are supplied.
struct Metrics {
    double mse = 0.0;
    double psnr = 0.0;  // +inf when mse over clamped values is 0
    std::optional<double> ssim;
};

struct ImageDims {
    int width = 0;
    int height = 0;
};

Metrics metrics(const Eigen::VectorXd& x_hat, const Eigen::VectorXd& x_true,
                std::optional<ImageDims> image = std::nullopt);

}  // namespace cmidps
