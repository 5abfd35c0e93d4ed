#pragma once

#include "cmidps/cmi.hpp"
#include "cmidps/operators.hpp"
#include "cmidps/rng.hpp"
#include "cmidps/schedule.hpp"
#include "cmidps/score_model.hpp"

#include <Eigen/Dense>

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cmidps {

enum class GuidanceMode { none, dps, pigdm, cmi_dps, cmi_pigdm };
enum class CmiMode { exact, hutchinson };

std::string to_string(GuidanceMode mode);
GuidanceMode guidance_mode_from_string(const std::string& s);
std::string to_string(CmiMode mode);
CmiMode cmi_mode_from_string(const std::string& s);

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::none;
    double eta0 = 0.05;   // CMI step scale
    double zeta0 = 1.0;   // DPS step scale
    CmiMode cmi_mode = CmiMode::exact;
    int probes = 8;       // Hutchinson probe count
    bool normalize_cmi_step = false;
    bool two_term = false;
    std::uint64_t seed = 0;

    bool uses_cmi() const {
        return mode == GuidanceMode::cmi_dps || mode == GuidanceMode::cmi_pigdm;
    }
    void validate() const;
};

struct StepDiag {
    int t = 0;
    double cmi_grad_norm = 0.0;  // NaN when the CMI step is disabled
    double cmi_value = 0.0;      // NaN when not computed
    bool jitter_applied = false;
    double residual_norm = 0.0;  // ||y - A x0_tilde||
};

/// Seeded, serializable outcome of one sampling run. Re-running with the
/// recorded config and seed reproduces x0 bit-identically.
struct RunRecord {
    GuidanceConfig config;
    std::vector<StepDiag> steps;
    Eigen::VectorXd x0;
    double wall_ms = 0.0;
    int cmi_steps_nonzero = 0;  // steps where the CMI gradient was nonzero

    nlohmann::json to_json() const;
};

/// One ancestral reverse step:
/// sqrt(alpha_t)(1 - abar_{t-1})/(1 - abar_t) x_t
///   + sqrt(abar_{t-1}) beta_t / (1 - abar_t) x0_tilde + sigma_t z,
/// with x0_tilde from Tweedie denoising. Callers pass z = 0 at t = 1.
Eigen::VectorXd ddpm_ancestral_step(const Eigen::VectorXd& x_t, int t,
                                    const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Eigen::VectorXd& z);

/// DPS measurement correction: zeta_t * grad ||y - A x0_tilde(x_t)|| with
/// zeta_t = zeta0 / ||residual|| and the gradient taken through the analytic
/// Tweedie Jacobian J = (I + (1 - abar_t) hessian) / sqrt(abar_t). Returns 0
/// on a zero residual. The sampler subtracts the returned vector.
Eigen::VectorXd dps_correction(const Eigen::VectorXd& x_t, int t, const ScoreModel& model,
                               const NoiseSchedule& schedule, const LinearOperator& a,
                               const NoiseModel& noise, const Eigen::VectorXd& y,
                               double zeta0);

/// Pseudoinverse-style guidance:
///   beta_t J' A' (r_t^2 A A' + Sigma_n)^{-1} (y - A x0_tilde),
/// with r_t^2 = (1-abar)/abar: the likelihood-score approximation under a
/// N(x0_tilde, r_t^2 I) denoiser posterior, weighted by the reverse-SDE step
/// size beta_t. The sampler adds the returned vector.
Eigen::VectorXd pigdm_correction(const Eigen::VectorXd& x_t, int t, const ScoreModel& model,
                                 const NoiseSchedule& schedule, const LinearOperator& a,
                                 const NoiseModel& noise, const Eigen::VectorXd& y);

/// Full reverse run: x_N ~ N(0, I), then for t = N..1 an ancestral step, the
/// CMI step (if enabled; gradient evaluated at x_t), and the measurement
/// correction. Chain noise comes from rng.child("chain"); Hutchinson probes
/// at step t from rng.child("cmi_probes", t), so enabling the CMI step never
/// shifts the chain draws.
RunRecord sample(const Eigen::VectorXd& y, const LinearOperator& a, const NoiseModel& noise,
                 const ScoreModel& model, const NoiseSchedule& schedule,
                 const GuidanceConfig& config, const RngStream& rng);

}  // namespace cmidps
