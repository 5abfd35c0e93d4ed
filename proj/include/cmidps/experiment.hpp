#pragma once

#include "cmidps/operators.hpp"
#include "cmidps/oracles.hpp"
#include "cmidps/samplers.hpp"
#include "cmidps/schedule.hpp"
#include "cmidps/score_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cmidps {

struct ScheduleSpec {
    int n_steps = 100;
    double beta_min = 1e-4;
    double beta_max = 0.02;
};

struct OperatorSpec {
    std::string kind;  // identity | random_mask | box_mask | gaussian_blur | downsample | dense
    double keep_fraction = 1.0;
    BoxSpec box;
    int kernel_size = 3;
    double blur_sigma = 1.0;
    int factor = 2;
    Eigen::MatrixXd dense;
};

struct NoiseSpec {
    // exactly one of the three forms
    std::optional<double> sigma;
    std::optional<Eigen::VectorXd> diag;
    std::optional<Eigen::MatrixXd> dense;
};

struct ExperimentConfig {
    explicit ExperimentConfig(GaussianMixturePrior p) : prior(std::move(p)) {}

    GaussianMixturePrior prior;
    ScheduleSpec schedule;
    OperatorSpec op;
    NoiseSpec noise;
    std::optional<ImageDims> image;
    std::vector<GuidanceConfig> samplers;
    int batch = 1;
    std::uint64_t base_seed = 0;
    std::string output_dir = "out";
    bool dump_grids = false;
    nlohmann::json raw;  // config as parsed, echoed into outputs
};

/// Parses and validates a config file. Parse and validation errors throw
/// ConfigError with the file name and, for syntax errors, the line number.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Same, from an in-memory JSON document.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// Instantiated components of a config.
struct ExperimentInstance {
    std::unique_ptr<GmmScoreModel> model;
    NoiseSchedule schedule;
    std::unique_ptr<LinearOperator> op;
    NoiseModel noise;
};

ExperimentInstance build_instance(const ExperimentConfig& config);

struct ResultRow {
    std::uint64_t seed = 0;
    std::string mode;
    double mse = 0.0;
    double psnr = 0.0;
    std::optional<double> ssim;
    double wall_ms = 0.0;
    int cmi_steps_nonzero = 0;
    bool failed = false;  // non-finite sampler state; metrics are NaN
};

struct ModeSummary {
    std::string mode;
    int n = 0;
    int n_failed = 0;
    double mse_mean = 0.0, mse_stderr = 0.0;
    double psnr_mean = 0.0, psnr_stderr = 0.0;
    double ssim_mean = 0.0, ssim_stderr = 0.0;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;  // sorted by (seed, mode)
    std::vector<ModeSummary> summaries;
    std::filesystem::path csv_path;
    std::filesystem::path summary_path;
};

/// Runs the configured seed batch: per seed draws x0 from the prior, forms
/// y = A x0 + n, runs every configured sampler, scores against x0. Writes
/// results.csv, summary.json and records/<seed>_<mode>.json under out_dir.
/// Rows are computed concurrently but written in sorted order; all
/// randomness is keyed by (base_seed + i), so output does not depend on the
/// worker count (0 = use the hardware default). A sampler run that hits
/// non-finite state produces a failure row and the batch continues.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& out_dir,
                                unsigned n_workers = 0);

struct DiagnosticCheck {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    std::string detail;
};

struct DiagnosticsReport {
    std::vector<DiagnosticCheck> checks;
    bool all_pass() const;
};

/// Invariant suite on the configured instance: operator adjoint and dense
/// consistency, CMI gradient vs finite differences, log-det duality,
/// Hutchinson convergence trend, posterior ordering, noise monotonicity,
/// scalar closed form.
DiagnosticsReport run_diagnostics(const ExperimentConfig& config);

/// Adjoint test on 100 random vector pairs; measured value is the largest
/// |<Ax,y> - <x,A'y>| over the pairs.
DiagnosticCheck check_adjoint(const LinearOperator& a, RngStream rng,
                              double tol = 1e-10);

std::string format_csv(const std::vector<ResultRow>& rows);

}  // namespace cmidps
