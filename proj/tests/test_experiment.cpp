#include "cmidps/errors.hpp"
#include "cmidps/experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cmidps;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_gmm_config() {
    return nlohmann::json::parse(R"({
      "prior": {
        "kind": "gmm",
        "weights": [0.6, 0.4],
        "means": [[1.0, -0.5], [-1.0, 0.8]],
        "covariances": [[[0.4, 0.1], [0.1, 0.3]], [[0.3, 0.0], [0.0, 0.5]]]
      },
      "schedule": {"n_steps": 20, "beta_min": 0.0001, "beta_max": 0.02},
      "operator": {"kind": "random_mask", "keep_fraction": 0.5},
      "noise": {"sigma": 0.05},
      "samplers": [
        {"mode": "dps", "zeta0": 0.1},
        {"mode": "cmi_dps", "zeta0": 0.1, "eta0": 0.02}
      ],
      "batch": 3,
      "base_seed": 11,
      "output_dir": "out"
    })");
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cmidps_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_wall_ms(const std::string& csv) {
    // Drops the wall_ms column (index 5) from every line.
    std::stringstream in(csv), out;
    std::string line;
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string field;
        int idx = 0;
        while (std::getline(ls, field, ',')) {
            if (idx != 5) out << field << ",";
            ++idx;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace

TEST_CASE("config parsing and validation") {
    SUBCASE("a well-formed config round-trips") {
        const ExperimentConfig cfg = parse_experiment_config(small_gmm_config());
        CHECK(cfg.prior.dim() == 2);
        CHECK(cfg.schedule.n_steps == 20);
        CHECK(cfg.samplers.size() == 2);
        CHECK(cfg.batch == 3);
        CHECK(cfg.base_seed == 11);
    }

    SUBCASE("rejects inconsistent dimensions") {
        nlohmann::json j = small_gmm_config();
        j["image"] = {{"width", 3}, {"height", 3}};
        CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    }

    SUBCASE("rejects duplicate sampler modes") {
        nlohmann::json j = small_gmm_config();
        j["samplers"] = {{{"mode", "dps"}}, {{"mode", "dps"}}};
        CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    }

    SUBCASE("rejects degenerate operators (m = 0)") {
        nlohmann::json j = small_gmm_config();
        j["prior"] = {{"kind", "standard_normal"}, {"dim", 4}};
        j["image"] = {{"width", 2}, {"height", 2}};
        j["operator"] = {{"kind", "box_mask"},
                         {"box", {{"row", 0}, {"col", 0}, {"rows", 2}, {"cols", 2}}}};
        CHECK_THROWS_WITH_AS(parse_experiment_config(j), doctest::Contains("degenerate"),
                             ConfigError);
    }

    SUBCASE("rejects nonpositive sigma") {
        nlohmann::json j = small_gmm_config();
        j["noise"] = {{"sigma", 0.0}};
        CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    }

    SUBCASE("isotropic covariance shorthand") {
        nlohmann::json j = small_gmm_config();
        j["prior"]["covariances"] = {{"isotropic", 0.2}};
        const ExperimentConfig cfg = parse_experiment_config(j);
        CHECK(cfg.prior.covariances()[0].isApprox(0.2 * Eigen::MatrixXd::Identity(2, 2)));
        j["prior"]["covariances"] = {{"isotropic", -1.0}};
        CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
    }

    SUBCASE("syntax errors carry the line number") {
        const fs::path dir = temp_dir("badcfg");
        const fs::path file = dir / "bad.json";
        std::ofstream(file) << "{\n  \"prior\": {\n  oops\n}\n";
        try {
            load_experiment_config(file);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("bad.json:3") != std::string::npos);
        }
    }

    SUBCASE("missing file is reported") {
        CHECK_THROWS_AS(load_experiment_config("/nonexistent/nope.json"), ConfigError);
    }
}

TEST_CASE("run_experiment writes schema-stable sorted CSV and is deterministic") {
    const ExperimentConfig cfg = parse_experiment_config(small_gmm_config());
    const fs::path d1 = temp_dir("run1");
    const fs::path d2 = temp_dir("run2");

    const ExperimentResult r1 = run_experiment(cfg, d1);
    const ExperimentResult r2 = run_experiment(cfg, d2);

    const std::string csv1 = slurp(r1.csv_path);
    CHECK(csv1.rfind("seed,mode,mse,psnr,ssim,wall_ms,cmi_steps_nonzero\n", 0) == 0);

    // Rows sorted by (seed, mode): 3 seeds x {cmi_dps, dps}.
    REQUIRE(r1.rows.size() == 6);
    CHECK(r1.rows[0].seed == 11);
    CHECK(r1.rows[0].mode == "cmi_dps");
    CHECK(r1.rows[1].mode == "dps");
    CHECK(r1.rows[5].seed == 13);

    // Byte-identical modulo the wall_ms column.
    CHECK(strip_wall_ms(csv1) == strip_wall_ms(slurp(r2.csv_path)));

    // Worker count cannot change the output.
    const fs::path d3 = temp_dir("run3");
    const ExperimentResult r3 = run_experiment(cfg, d3, 1);
    CHECK(strip_wall_ms(csv1) == strip_wall_ms(slurp(r3.csv_path)));
    fs::remove_all(d3);

    // Records exist and reproduce the run bit-identically.
    const fs::path rec_path = d1 / "records" / "11_dps.json";
    REQUIRE(fs::exists(rec_path));
    const nlohmann::json rec = nlohmann::json::parse(slurp(rec_path));
    CHECK(rec.at("mode") == "dps");
    CHECK(rec.at("seed") == 11);

    const ExperimentInstance inst = build_instance(cfg);
    GuidanceConfig gc;
    gc.mode = GuidanceMode::dps;
    gc.zeta0 = rec.at("zeta0").get<double>();
    gc.eta0 = rec.at("eta0").get<double>();
    gc.seed = rec.at("seed").get<std::uint64_t>();
    Eigen::VectorXd y(rec.at("y").size());
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y[i] = rec.at("y")[static_cast<std::size_t>(i)].get<double>();
    const RunRecord rerun = sample(y, *inst.op, inst.noise, *inst.model, inst.schedule, gc,
                                   RngStream(gc.seed));
    for (Eigen::Index i = 0; i < rerun.x0.size(); ++i)
        CHECK(rerun.x0[i] == rec.at("x0")[static_cast<std::size_t>(i)].get<double>());

    // summary.json aggregates both modes.
    const nlohmann::json summary = nlohmann::json::parse(slurp(r1.summary_path));
    REQUIRE(summary.at("modes").size() == 2);
    CHECK(summary.at("modes")[0].at("mode") == "cmi_dps");
    CHECK(summary.at("modes")[0].at("n") == 3);

    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("run_experiment computes ssim only for image-shaped data") {
    nlohmann::json j = small_gmm_config();
    j["prior"] = {{"kind", "standard_normal"}, {"dim", 4}};
    j["image"] = {{"width", 2}, {"height", 2}};
    j["operator"] = {{"kind", "identity"}};
    j["samplers"] = {{{"mode", "none"}}};
    j["batch"] = 1;
    j["dump_grids"] = true;
    const ExperimentConfig cfg = parse_experiment_config(j);
    const fs::path dir = temp_dir("ssim");
    const ExperimentResult res = run_experiment(cfg, dir);
    REQUIRE(res.rows.size() == 1);
    CHECK(res.rows[0].ssim.has_value());
    CHECK(fs::exists(dir / "grids" / "11_none.txt"));
    fs::remove_all(dir);
}

TEST_CASE("diagnostics pass on sound configs") {
    SUBCASE("Gaussian prior: everything passes, CMI gradient reported as 0") {
        nlohmann::json j = small_gmm_config();
        j["prior"] = {{"kind", "standard_normal"}, {"dim", 3}};
        j["operator"] = {{"kind", "random_mask"}, {"keep_fraction", 0.7}};
        const DiagnosticsReport rep = run_diagnostics(parse_experiment_config(j));
        for (const auto& c : rep.checks) {
            CAPTURE(c.name);
            CHECK(c.pass);
            if (c.name == "cmi_gradient_fd") CHECK(c.measured == 0.0);
        }
    }

    SUBCASE("GMM config: gradient check reports a small measured error") {
        const DiagnosticsReport rep = run_diagnostics(parse_experiment_config(small_gmm_config()));
        bool saw_grad = false;
        for (const auto& c : rep.checks) {
            CAPTURE(c.name);
            CHECK(c.pass);
            if (c.name == "cmi_gradient_fd") {
                saw_grad = true;
                CHECK(c.measured < 1e-4);
            }
        }
        CHECK(saw_grad);
        CHECK(rep.all_pass());
    }
}

namespace {

// Operator whose adjoint is deliberately wrong (negative control).
class BrokenAdjointOperator : public LinearOperator {
  public:
    explicit BrokenAdjointOperator(int d) : d_(d) {}
    int in_dim() const override { return d_; }
    int out_dim() const override { return d_; }
    std::string kind() const override { return "dense"; }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return 2.0 * x; }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override { return 3.0 * y; }

  private:
    int d_;
};

}  // namespace

TEST_CASE("corrupted adjoint fails the adjoint check (negative control)") {
    const BrokenAdjointOperator bad(3);
    const DiagnosticCheck c = check_adjoint(bad, RngStream(5));
    CHECK(!c.pass);
    CHECK(c.measured > 1e-3);
}
