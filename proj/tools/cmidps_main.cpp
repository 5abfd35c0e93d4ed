#include "cmidps/errors.hpp"
#include "cmidps/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

namespace {

constexpr const char* kVersion = "0.1.0";

int cmd_run(const std::string& config_path, const std::optional<std::string>& out,
            const std::optional<int>& batch, const std::optional<std::uint64_t>& base_seed) {
    cmidps::ExperimentConfig cfg = cmidps::load_experiment_config(config_path);
    if (batch) {
        if (*batch < 1) throw cmidps::ConfigError("--batch must be >= 1");
        cfg.batch = *batch;
    }
    if (base_seed) cfg.base_seed = *base_seed;
    const std::filesystem::path out_dir = out ? *out : cfg.output_dir;

    const cmidps::ExperimentResult res = cmidps::run_experiment(cfg, out_dir);
    for (const auto& s : res.summaries) {
        std::printf("%-10s n=%d failed=%d mse=%.6g+-%.2g psnr=%.4g+-%.2g", s.mode.c_str(),
                    s.n, s.n_failed, s.mse_mean, s.mse_stderr, s.psnr_mean, s.psnr_stderr);
        if (cfg.image) std::printf(" ssim=%.4g+-%.2g", s.ssim_mean, s.ssim_stderr);
        std::printf("\n");
    }
    std::printf("wrote %s\n", res.csv_path.string().c_str());
    std::printf("wrote %s\n", res.summary_path.string().c_str());
    return 0;
}

int cmd_diagnose(const std::string& config_path) {
    const cmidps::ExperimentConfig cfg = cmidps::load_experiment_config(config_path);
    const cmidps::DiagnosticsReport rep = cmidps::run_diagnostics(cfg);
    for (const auto& c : rep.checks)
        std::printf("[%s] %-28s measured=%.6g  %s\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.measured, c.detail.c_str());
    return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CMI-guided diffusion posterior sampling experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out;
    std::optional<int> batch;
    std::optional<std::uint64_t> base_seed;

    auto* run = app.add_subcommand("run", "Run a seeded experiment batch from a config file");
    run->add_option("--config", config_path, "Path to the experiment config (JSON)")
        ->required();
    run->add_option("--out", out, "Output directory (default: config output_dir)");
    run->add_option("--batch", batch, "Override the number of seeds");
    run->add_option("--base-seed", base_seed, "Override the base seed");

    auto* diagnose = app.add_subcommand("diagnose", "Run the invariant checks on a config");
    diagnose->add_option("--config", config_path, "Path to the experiment config (JSON)")
        ->required();

    auto* version = app.add_subcommand("version", "Print the version");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out, batch, base_seed);
        if (diagnose->parsed()) return cmd_diagnose(config_path);
        if (version->parsed()) {
            std::printf("cmidps %s\n", kVersion);
            return 0;
        }
    } catch (const cmidps::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
