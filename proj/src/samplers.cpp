#include "cmidps/samplers.hpp"

#include "cmidps/errors.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace cmidps {

std::string to_string(GuidanceMode mode) {
    switch (mode) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::dps: return "dps";
        case GuidanceMode::pigdm: return "pigdm";
        case GuidanceMode::cmi_dps: return "cmi_dps";
        case GuidanceMode::cmi_pigdm: return "cmi_pigdm";
    }
    return "none";
}

GuidanceMode guidance_mode_from_string(const std::string& s) {
    if (s == "none") return GuidanceMode::none;
    if (s == "dps") return GuidanceMode::dps;
    if (s == "pigdm") return GuidanceMode::pigdm;
    if (s == "cmi_dps") return GuidanceMode::cmi_dps;
    if (s == "cmi_pigdm") return GuidanceMode::cmi_pigdm;
    throw ConfigError("unknown sampler mode '" + s + "'");
}

std::string to_string(CmiMode mode) {
    return mode == CmiMode::exact ? "exact" : "hutchinson";
}

CmiMode cmi_mode_from_string(const std::string& s) {
    if (s == "exact") return CmiMode::exact;
    if (s == "hutchinson") return CmiMode::hutchinson;
    throw ConfigError("unknown cmi_mode '" + s + "'");
}

void GuidanceConfig::validate() const {
    if (!std::isfinite(eta0) || eta0 < 0.0)
        throw ConfigError("eta0 must be finite and nonnegative");
    if (!std::isfinite(zeta0) || zeta0 < 0.0)
        throw ConfigError("zeta0 must be finite and nonnegative");
    if (uses_cmi() && cmi_mode == CmiMode::hutchinson && probes < 1)
        throw ConfigError("probe count must be >= 1 for the Hutchinson estimator");
}

nlohmann::json RunRecord::to_json() const {
    nlohmann::json steps_json = nlohmann::json::array();
    for (const auto& s : steps) {
        steps_json.push_back({{"t", s.t},
                              {"cmi_grad_norm", s.cmi_grad_norm},
                              {"cmi_value", s.cmi_value},
                              {"jitter_applied", s.jitter_applied},
                              {"residual_norm", s.residual_norm}});
    }
    std::vector<double> x0v(x0.data(), x0.data() + x0.size());
    return nlohmann::json{{"seed", config.seed},
                          {"mode", to_string(config.mode)},
                          {"eta0", config.eta0},
                          {"zeta0", config.zeta0},
                          {"r", config.probes},
                          {"cmi_mode", to_string(config.cmi_mode)},
                          {"normalize_cmi_step", config.normalize_cmi_step},
                          {"two_term", config.two_term},
                          {"steps", std::move(steps_json)},
                          {"x0", std::move(x0v)},
                          {"wall_ms", wall_ms},
                          {"cmi_steps_nonzero", cmi_steps_nonzero}};
}

Eigen::VectorXd ddpm_ancestral_step(const Eigen::VectorXd& x_t, int t,
                                    const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Eigen::VectorXd& z) {
    const double abar = schedule.alpha_bar(t);
    const double abar_prev = schedule.alpha_bar(t - 1);
    const double beta = schedule.beta(t);
    const double alpha = schedule.alpha(t);

    const Eigen::VectorXd x0_tilde = tweedie_denoise(model, schedule, x_t, t);
    const double c_xt = std::sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar);
    const double c_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    return c_xt * x_t + c_x0 * x0_tilde + schedule.sampler_std(t) * z;
}

namespace {

// Tweedie Jacobian times a vector from the right of its transpose:
// J = (I + (1 - abar) H) / sqrt(abar) is symmetric, so J' v = J v.
Eigen::VectorXd tweedie_jacobian_apply(const ScoreModel& model, const NoiseSchedule& schedule,
                                       const Eigen::VectorXd& x_t, int t,
                                       const Eigen::VectorXd& v) {
    const double abar = schedule.alpha_bar(t);
    return (v + (1.0 - abar) * model.hvp(x_t, t, v)) / std::sqrt(abar);
}

}  // namespace

Eigen::VectorXd dps_correction(const Eigen::VectorXd& x_t, int t, const ScoreModel& model,
                               const NoiseSchedule& schedule, const LinearOperator& a,
                               const NoiseModel& noise, const Eigen::VectorXd& y,
                               double zeta0) {
    (void)noise;  // the DPS residual is unweighted
    const Eigen::VectorXd x0_tilde = tweedie_denoise(model, schedule, x_t, t);
    const Eigen::VectorXd res = y - a.apply(x0_tilde);
    const double rn = res.norm();
    if (rn == 0.0) return Eigen::VectorXd::Zero(x_t.size());
    // grad ||res|| = -J' A' res / ||res||; zeta_t = zeta0 / ||res||.
    const Eigen::VectorXd grad_norm =
        -tweedie_jacobian_apply(model, schedule, x_t, t, a.adjoint(res)) / rn;
    return (zeta0 / rn) * grad_norm;
}

Eigen::VectorXd pigdm_correction(const Eigen::VectorXd& x_t, int t, const ScoreModel& model,
                                 const NoiseSchedule& schedule, const LinearOperator& a,
                                 const NoiseModel& noise, const Eigen::VectorXd& y) {
    // Pseudoinverse guidance: the likelihood score under a
    // N(x0_tilde, r_t^2 I) denoiser posterior,
    //   J' A' (r_t^2 A A' + Sigma_n)^{-1} (y - A x0_tilde),
    // weighted by beta_t, the per-step drift weight of the discretized
    // reverse SDE (the same weight the prior score carries in the ancestral
    // update).
    const double abar = schedule.alpha_bar(t);
    const double rt2 = (1.0 - abar) / abar;
    const Eigen::VectorXd x0_tilde = tweedie_denoise(model, schedule, x_t, t);
    const Eigen::VectorXd res = y - a.apply(x0_tilde);

    const Eigen::MatrixXd a_dense = a.to_dense();
    Eigen::MatrixXd gram = rt2 * a_dense * a_dense.transpose() + noise.dense_cov();
    gram = 0.5 * (gram + gram.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw FactorizationError("pigdm: measurement Gram matrix is not positive definite");
    return schedule.beta(t) *
           tweedie_jacobian_apply(model, schedule, x_t, t, a.adjoint(llt.solve(res)));
}

RunRecord sample(const Eigen::VectorXd& y, const LinearOperator& a, const NoiseModel& noise,
                 const ScoreModel& model, const NoiseSchedule& schedule,
                 const GuidanceConfig& config, const RngStream& rng) {
    config.validate();
    const int d = model.dim();
    if (a.in_dim() != d) throw ShapeError("sample: operator input dim != model dim");
    if (y.size() != a.out_dim()) throw ShapeError("sample: y dim != operator output dim");
    if (noise.dim() != a.out_dim()) throw ShapeError("sample: noise dim != operator output dim");

    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = config;
    rec.steps.reserve(static_cast<std::size_t>(schedule.n_steps()));

    RngStream chain = rng.child("chain");
    Eigen::VectorXd x = chain.normal_vec(d);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int t = schedule.n_steps(); t >= 1; --t) {
        const Eigen::VectorXd z =
            t > 1 ? chain.normal_vec(d) : Eigen::VectorXd::Zero(d);
        Eigen::VectorXd x_prime = ddpm_ancestral_step(x, t, model, schedule, z);

        StepDiag diag;
        diag.t = t;
        diag.cmi_grad_norm = nan;
        diag.cmi_value = nan;

        if (config.uses_cmi()) {
            Eigen::VectorXd g;
            if (config.cmi_mode == CmiMode::exact) {
                g = cmi_grad_exact(model, schedule, x, t, a, noise);
            } else {
                g = cmi_grad_hutchinson(model, schedule, x, t, a, noise, config.probes,
                                        rng.child("cmi_probes", static_cast<std::uint64_t>(t)),
                                        config.two_term);
            }
            const double gn = g.norm();
            diag.cmi_grad_norm = gn;
            if (gn > 0.0) ++rec.cmi_steps_nonzero;
            const double eta_t =
                config.normalize_cmi_step ? config.eta0 / (gn + 1e-12) : config.eta0;
            x_prime += eta_t * g;

            const PosteriorMoments pm = posterior_cov(model.hessian(x, t), schedule, t);
            const MeasurementPosterior mp = measurement_posterior_cov(pm, a, noise);
            diag.cmi_value = cmi_value(pm.sigma_post, mp.sigma_post_y);
            diag.jitter_applied = pm.jitter_applied;
        }

        Eigen::VectorXd x_next;
        switch (config.mode) {
            case GuidanceMode::dps:
            case GuidanceMode::cmi_dps:
                x_next = x_prime - dps_correction(x, t, model, schedule, a, noise, y,
                                                  config.zeta0);
                break;
            case GuidanceMode::pigdm:
            case GuidanceMode::cmi_pigdm:
                x_next = x_prime + pigdm_correction(x, t, model, schedule, a, noise, y);
                break;
            case GuidanceMode::none:
                x_next = x_prime;
                break;
        }

        diag.residual_norm =
            a.out_dim() > 0
                ? (y - a.apply(tweedie_denoise(model, schedule, x, t))).norm()
                : nan;
        rec.steps.push_back(diag);

        if (!x_next.allFinite())
            throw NonFiniteError("sample: non-finite state at step t = " + std::to_string(t),
                                 t);
        x = std::move(x_next);
    }

    rec.x0 = std::move(x);
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    return rec;
}

}  // namespace cmidps
