#include "cmidps/cmi.hpp"

#include "cmidps/errors.hpp"

#include <cmath>
#include <string>

namespace cmidps {

namespace {

constexpr double kSpdFloor = 1e-8;
constexpr double kLog2PiE = 1.8378770664093454836 + 1.0;  // log(2 pi e)

double chol_log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    double ld = 0.0;
    const auto& l = llt.matrixLLT();
    for (int i = 0; i < l.rows(); ++i) ld += std::log(l(i, i));
    return 2.0 * ld;
}

Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& m, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
        throw FactorizationError(std::string(what) + " is not positive definite");
    return llt;
}

Eigen::MatrixXd symmetrize(Eigen::MatrixXd m) { return 0.5 * (m + m.transpose()); }

}  // namespace

PosteriorMoments posterior_cov(const Eigen::MatrixXd& hessian,
                               const NoiseSchedule& schedule, int t) {
    const int d = static_cast<int>(hessian.rows());
    if (hessian.cols() != d) throw ShapeError("posterior_cov: hessian must be square");
    const double abar = schedule.alpha_bar(t);
    if (!(abar > 0.0))
        throw StepIndexError("posterior_cov: degenerate step, abar_t = 0");

    PosteriorMoments pm;
    pm.t = t;
    Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(d, d) + (1.0 - abar) * symmetrize(hessian);
    const double lambda_min =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(inner, Eigen::EigenvaluesOnly)
            .eigenvalues()
            .minCoeff();
    if (lambda_min < kSpdFloor) {
        pm.jitter_applied = true;
        pm.jitter = kSpdFloor - lambda_min;
        inner.diagonal().array() += pm.jitter;
    }
    pm.sigma_post = (1.0 - abar) / abar * inner;
    pm.chol = factor_spd(pm.sigma_post, "posterior covariance");
    return pm;
}

PosteriorMoments posterior_moments(const ScoreModel& model, const NoiseSchedule& schedule,
                                   const Eigen::VectorXd& x_t, int t) {
    PosteriorMoments pm = posterior_cov(model.hessian(x_t, t), schedule, t);
    pm.mu_post = tweedie_denoise(model, schedule, x_t, t);
    return pm;
}

MeasurementPosterior measurement_posterior_cov(const PosteriorMoments& post,
                                               const LinearOperator& a,
                                               const NoiseModel& noise) {
    const int d = static_cast<int>(post.sigma_post.rows());
    if (a.in_dim() != d)
        throw ShapeError("measurement_posterior_cov: operator input dim mismatch");
    if (noise.dim() != a.out_dim())
        throw ShapeError("measurement_posterior_cov: noise dim mismatch");

    MeasurementPosterior mp;
    mp.a_dense = a.to_dense();
    mp.noise = noise;

    const Eigen::MatrixXd sp_inv = post.chol.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd r = symmetrize(sp_inv + noise.quadratic_form(mp.a_dense));
    const Eigen::LLT<Eigen::MatrixXd> r_llt = factor_spd(r, "posterior information matrix");
    mp.sigma_post_y = symmetrize(r_llt.solve(Eigen::MatrixXd::Identity(d, d)));
    mp.chol = factor_spd(mp.sigma_post_y, "measurement posterior covariance");
    return mp;
}

double cmi_value(const Eigen::MatrixXd& sigma_post, const Eigen::MatrixXd& sigma_post_y) {
    if (sigma_post.rows() != sigma_post_y.rows())
        throw ShapeError("cmi_value: dimension mismatch");
    const auto lp = factor_spd(sigma_post, "sigma_post");
    const auto lpy = factor_spd(sigma_post_y, "sigma_post_y");
    return 0.5 * (chol_log_det(lp) - chol_log_det(lpy));
}

double gaussian_entropy(const Eigen::MatrixXd& sigma) {
    const auto llt = factor_spd(sigma, "entropy covariance");
    return 0.5 * (static_cast<double>(sigma.rows()) * kLog2PiE + chol_log_det(llt));
}

Tensor3 contract1(const Eigen::MatrixXd& e, const Tensor3& f) {
    const int d = f.dim();
    if (e.rows() != d || e.cols() != d) throw ShapeError("contract1: shape mismatch");
    Tensor3 out(d);
    for (int k = 0; k < d; ++k)
        out.slice[static_cast<std::size_t>(k)] = e * f.slice[static_cast<std::size_t>(k)];
    return out;
}

Tensor3 contract2(const Tensor3& f, const Eigen::MatrixXd& e) {
    const int d = f.dim();
    if (e.rows() != d || e.cols() != d) throw ShapeError("contract2: shape mismatch");
    Tensor3 out(d);
    for (int k = 0; k < d; ++k)
        out.slice[static_cast<std::size_t>(k)] = f.slice[static_cast<std::size_t>(k)] * e;
    return out;
}

Eigen::VectorXd trace_slices(const Eigen::MatrixXd& m, const Tensor3& f) {
    const int d = f.dim();
    if (m.rows() != d || m.cols() != d) throw ShapeError("trace_slices: shape mismatch");
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k)
        v[k] = m.cwiseProduct(f.slice[static_cast<std::size_t>(k)].transpose()).sum();
    return v;
}

Tensor3 grad_sigma_post(const Tensor3& third, const NoiseSchedule& schedule, int t) {
    const double abar = schedule.alpha_bar(t);
    const double scale = (1.0 - abar) * (1.0 - abar) / abar;
    Tensor3 out(third.dim());
    for (int k = 0; k < third.dim(); ++k)
        out.slice[static_cast<std::size_t>(k)] = scale * third.slice[static_cast<std::size_t>(k)];
    return out;
}

Tensor3 grad_sigma_post_y(const PosteriorMoments& post, const MeasurementPosterior& meas,
                          const Tensor3& grad_sp) {
    const int d = grad_sp.dim();
    if (post.sigma_post.rows() != d || meas.sigma_post_y.rows() != d)
        throw ShapeError("grad_sigma_post_y: dimension mismatch");
    Tensor3 out(d);
    for (int k = 0; k < d; ++k) {
        // Spy [ Sp^{-1} T_k Sp^{-1} ] Spy, with Sp^{-1} applied by solves.
        const Eigen::MatrixXd inner =
            post.chol.solve(post.chol.solve(grad_sp.slice[static_cast<std::size_t>(k)])
                                .transpose());
        out.slice[static_cast<std::size_t>(k)] =
            meas.sigma_post_y * inner * meas.sigma_post_y;
    }
    return out;
}

namespace {

struct CmiGradContext {
    PosteriorMoments post;
    MeasurementPosterior meas;
    double scale = 0.0;  // (1 - abar)^2 / abar
};

CmiGradContext make_context(const ScoreModel& model, const NoiseSchedule& schedule,
                            const Eigen::VectorXd& x_t, int t, const LinearOperator& a,
                            const NoiseModel& noise) {
    CmiGradContext ctx;
    ctx.post = posterior_cov(model.hessian(x_t, t), schedule, t);
    ctx.meas = measurement_posterior_cov(ctx.post, a, noise);
    const double abar = schedule.alpha_bar(t);
    ctx.scale = (1.0 - abar) * (1.0 - abar) / abar;
    return ctx;
}

}  // namespace

Eigen::VectorXd cmi_grad_exact(const ScoreModel& model, const NoiseSchedule& schedule,
                               const Eigen::VectorXd& x_t, int t, const LinearOperator& a,
                               const NoiseModel& noise, int dense_limit) {
    const int d = model.dim();
    if (d > dense_limit)
        throw DenseLimitError("cmi_grad_exact: d = " + std::to_string(d) +
                              " exceeds the dense limit " + std::to_string(dense_limit) +
                              "; use cmi_grad_hutchinson");
    const CmiGradContext ctx = make_context(model, schedule, x_t, t, a, noise);
    const Tensor3 third = model.dense_third_tensor(x_t, t, dense_limit);
    const Tensor3 gsp = grad_sigma_post(third, schedule, t);
    const Tensor3 gspy = grad_sigma_post_y(ctx.post, ctx.meas, gsp);

    const Eigen::MatrixXd sp_inv =
        ctx.post.chol.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd spy_inv =
        ctx.meas.chol.solve(Eigen::MatrixXd::Identity(d, d));
    return 0.5 * (trace_slices(sp_inv, gsp) - trace_slices(spy_inv, gspy));
}

Eigen::VectorXd cmi_grad_exact_reduced(const ScoreModel& model, const NoiseSchedule& schedule,
                                       const Eigen::VectorXd& x_t, int t,
                                       const LinearOperator& a, const NoiseModel& noise,
                                       int dense_limit) {
    const int d = model.dim();
    if (d > dense_limit)
        throw DenseLimitError("cmi_grad_exact_reduced: d exceeds the dense limit");
    const CmiGradContext ctx = make_context(model, schedule, x_t, t, a, noise);
    const Tensor3 third = model.dense_third_tensor(x_t, t, dense_limit);
    const Tensor3 gsp = grad_sigma_post(third, schedule, t);

    const Eigen::MatrixXd sp_inv = ctx.post.chol.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd m =
        sp_inv - sp_inv * ctx.meas.sigma_post_y * sp_inv;
    return 0.5 * trace_slices(m, gsp);
}

Eigen::VectorXd cmi_grad_hutchinson(const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Eigen::VectorXd& x_t, int t,
                                    const LinearOperator& a, const NoiseModel& noise,
                                    int probes, const RngStream& rng, bool two_term) {
    if (probes < 1) throw ConfigError("cmi_grad_hutchinson: probe count must be >= 1");
    const int d = model.dim();
    const CmiGradContext ctx = make_context(model, schedule, x_t, t, a, noise);

    const Eigen::MatrixXd sp_inv = ctx.post.chol.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd w = symmetrize(sp_inv * ctx.meas.sigma_post_y * sp_inv);

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < probes; ++i) {
        RngStream probe_rng = rng.child("probe", static_cast<std::uint64_t>(i));
        const Eigen::VectorXd v = probe_rng.rademacher_vec(d);
        if (two_term) {
            acc += model.third_bilinear_grad(x_t, t, sp_inv * v, v);
            acc -= model.third_bilinear_grad(x_t, t, w * v, v);
        } else {
            acc += model.third_bilinear_grad(x_t, t, (sp_inv - w) * v, v);
        }
    }
    return 0.5 * ctx.scale * acc / static_cast<double>(probes);
}

}  // namespace cmidps
