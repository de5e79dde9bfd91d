// dtfixup-lab: depth sweeps, training runs and the verification suite.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dtfixup/checks.hpp"
#include "dtfixup/config.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/harness.hpp"
#include "dtfixup/log.hpp"

namespace fs = std::filesystem;
using namespace dtfixup;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<double> band;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed", o.seed, "Run a single seed instead of the config's seed list");
    cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--band", o.band, "Flatness band for the summary flags (max/min ratio)");
}

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
    ExperimentConfig c = load_config(path);
    if (o.seed) c.seeds = {*o.seed};
    if (o.threads) c.threads = *o.threads;
    if (o.band) c.band = *o.band;
    c.validate();
    return c;
}

void finish_manifest(RunManifest m, const fs::path& out, const std::string& csv) {
    m.finished = utc_timestamp();
    m.outputs = {csv, "manifest.txt"};
    write_text_file(out / "manifest.txt", m.to_text());
}

int run_sweep(const std::string& config_path, const fs::path& out, const Overrides& o) {
    const ExperimentConfig config = load_with_overrides(config_path, o);
    fs::create_directories(out);
    const RunManifest manifest = make_manifest(config, "sweep");
    const auto reports = run_depth_sweep(config);
    emit_csv(reports, out / "diagnostics.csv");
    finish_manifest(manifest, out, "diagnostics.csv");
    std::cout << summarize(reports, config.band);
    logger()->info("wrote {}", (out / "diagnostics.csv").string());
    return 0;
}

int run_train(const std::string& config_path, const fs::path& out, const Overrides& o) {
    const ExperimentConfig config = load_with_overrides(config_path, o);
    fs::create_directories(out);
    const RunManifest manifest = make_manifest(config, "train");
    const auto curves = run_training(config);
    emit_csv(curves, out / "curves.csv");
    finish_manifest(manifest, out, "curves.csv");

    const auto w = config.training.smoothing;
    std::cout << fmt::format("{:<12} {:>4} {:>6} {:>8} {:>12} {:>12} {:>8} {}\n", "scheme", "N", "seed", "steps",
                             "initial", "best_smooth", "ratio", "status");
    for (const auto& c : curves) {
        const double init = c.initial_eval();
        const double best = c.best_smoothed_eval(w);
        std::cout << fmt::format("{:<12} {:>4} {:>6} {:>8} {:>12.4g} {:>12.4g} {:>8.3f} {}\n", scheme_name(c.scheme),
                                 c.n_blocks, c.seed, c.points.back().step, init, best, best / init,
                                 c.diverged ? "diverged" : "ok");
    }
    logger()->info("wrote {}", (out / "curves.csv").string());
    return 0;
}

int run_verify(std::uint64_t seed) {
    bool ok = true;
    for (const auto& r : checks::run_property_suite(seed)) {
        std::cout << fmt::format("[{}] {}: {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
        ok = ok && r.passed;
    }
    std::cout << (ok ? "verify: all checks passed\n" : "verify: FAILED\n");
    return ok ? 0 : kExitFailure;
}

} // namespace

int main(int argc, char** argv) {
    configure_logging_from_env();

    CLI::App app{"DT-Fixup initialization laboratory"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    Overrides sweep_o, train_o;
    std::uint64_t verify_seed = 0;

    auto* sweep = app.add_subcommand("sweep", "Depth sweep over the diagnostics probes; writes diagnostics.csv");
    sweep->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", out_dir, "Output directory")->required();
    add_overrides(sweep, sweep_o);

    auto* train = app.add_subcommand("train", "Synthetic-task training runs; writes curves.csv");
    train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_dir, "Output directory")->required();
    add_overrides(train, train_o);

    auto* verify = app.add_subcommand("verify", "Finite-difference, oracle and invariant checks; exit 0 on success");
    verify->add_option("--seed", verify_seed, "Seed of the random instances");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sweep) return run_sweep(config_path, out_dir, sweep_o);
        if (*train) return run_train(config_path, out_dir, train_o);
        if (*verify) return run_verify(verify_seed);
    } catch (const ConfigError& e) {
        logger()->error("{}", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        logger()->error("{}", e.what());
        return kExitFailure;
    }
    return kExitFailure;
}
