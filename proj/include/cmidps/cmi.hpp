#pragma once

#include "cmidps/operators.hpp"
#include "cmidps/rng.hpp"
#include "cmidps/schedule.hpp"
#include "cmidps/score_model.hpp"
#include "cmidps/tensor3.hpp"

#include <Eigen/Dense>

namespace cmidps {

/// Moments of p(x0 | x_t) under the Gaussian posterior model.
struct PosteriorMoments {
    Eigen::VectorXd mu_post;     // Tweedie mean (empty if built from a Hessian only)
    Eigen::MatrixXd sigma_post;  // symmetric positive definite after jitter
    Eigen::LLT<Eigen::MatrixXd> chol;
    int t = 0;
    bool jitter_applied = false;
    double jitter = 0.0;
};

/// Covariance of p(x0 | x_t, y) and the ingredients that produced it.
struct MeasurementPosterior {
    Eigen::MatrixXd sigma_post_y;
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::MatrixXd a_dense;  // the A that produced it
    NoiseModel noise;
};

/// Sigma_post = (1 - abar_t) / abar_t * (I + (1 - abar_t) * hessian).
/// If the inner matrix has an eigenvalue below 1e-8 a diagonal jitter lifts
/// it back; the flag on the result records that.
PosteriorMoments posterior_cov(const Eigen::MatrixXd& hessian,
                               const NoiseSchedule& schedule, int t);

/// posterior_cov plus the Tweedie mean from the model.
PosteriorMoments posterior_moments(const ScoreModel& model, const NoiseSchedule& schedule,
                                   const Eigen::VectorXd& x_t, int t);

/// Sigma_post_y = (Sigma_post^{-1} + A' Sigma_n^{-1} A)^{-1}, all inverses via
/// Cholesky solves.
MeasurementPosterior measurement_posterior_cov(const PosteriorMoments& post,
                                               const LinearOperator& a,
                                               const NoiseModel& noise);

/// I(x0; y | x_t) = 1/2 log det(Sigma_post) / det(Sigma_post_y), in nats,
/// from Cholesky log-determinants.
double cmi_value(const Eigen::MatrixXd& sigma_post, const Eigen::MatrixXd& sigma_post_y);

/// 1/2 (d log(2 pi e) + logdet Sigma).
double gaussian_entropy(const Eigen::MatrixXd& sigma);

/// Slice-wise left multiply: [E o1 F]_{:,:,k} = E F_{:,:,k}.
Tensor3 contract1(const Eigen::MatrixXd& e, const Tensor3& f);

/// Slice-wise right multiply: [F o2 E]_{:,:,k} = F_{:,:,k} E.
Tensor3 contract2(const Tensor3& f, const Eigen::MatrixXd& e);

/// d-vector with entry k = Tr(M F_{:,:,k}).
Eigen::VectorXd trace_slices(const Eigen::MatrixXd& m, const Tensor3& f);

/// grad Sigma_post = (1 - abar_t)^2 / abar_t * grad^3 log p_t.
Tensor3 grad_sigma_post(const Tensor3& third, const NoiseSchedule& schedule, int t);

/// grad Sigma_post_y = Spy o1 [ Sp^{-1} o1 grad Sp o2 Sp^{-1} ] o2 Spy.
Tensor3 grad_sigma_post_y(const PosteriorMoments& post, const MeasurementPosterior& meas,
                          const Tensor3& grad_sp);

/// Exact CMI gradient:
/// 1/2 [ trace_slices(Sp^{-1}, grad Sp) - trace_slices(Spy^{-1}, grad Spy) ].
/// Needs the dense third tensor, so d must be within dense_limit.
Eigen::VectorXd cmi_grad_exact(const ScoreModel& model, const NoiseSchedule& schedule,
                               const Eigen::VectorXd& x_t, int t, const LinearOperator& a,
                               const NoiseModel& noise,
                               int dense_limit = kDefaultDenseLimit);

/// Algebraically reduced form of the same gradient,
/// 1/2 trace_slices(Sp^{-1} - Sp^{-1} Spy Sp^{-1}, grad Sp); used as the
/// second route in consistency checks.
Eigen::VectorXd cmi_grad_exact_reduced(const ScoreModel& model, const NoiseSchedule& schedule,
                                       const Eigen::VectorXd& x_t, int t,
                                       const LinearOperator& a, const NoiseModel& noise,
                                       int dense_limit = kDefaultDenseLimit);

/// Hutchinson estimate of the CMI gradient with r probes of +-1 entries.
/// Matrix-free in the third derivative: each probe v needs one
/// third_bilinear_grad call with u = (Sp^{-1} - Sp^{-1} Spy Sp^{-1}) v, or
/// two calls (u1 = Sp^{-1} v, u2 = Sp^{-1} Spy Sp^{-1} v) when `two_term`
/// requests the literal two-trace form; both give identical results by
/// bilinearity. Probe i draws from rng.child("probe", i), so evaluation
/// order cannot change the result.
Eigen::VectorXd cmi_grad_hutchinson(const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Eigen::VectorXd& x_t, int t,
                                    const LinearOperator& a, const NoiseModel& noise,
                                    int probes, const RngStream& rng,
                                    bool two_term = false);

}  // namespace cmidps
