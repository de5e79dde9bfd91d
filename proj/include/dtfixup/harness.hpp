#pragma once

// Experiment orchestration: depth sweeps over the diagnostics probes, the
// synthetic training task, and CSV emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtfixup/diagnostics.hpp"
#include "dtfixup/scheme.hpp"
#include "dtfixup/transformer.hpp"

namespace dtfixup {

enum class Optimizer { Sgd, Adam };

struct ConfigIssue {
    std::string key;
    std::string message;
};

struct TrainingConfig {
    std::size_t train_size = 256;   // sequences
    std::size_t eval_size = 32;
    std::size_t outputs = 4;        // regression targets per token
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    double learning_rate = 1.0;
    double decay_steps = 100.0;     // inverse-sqrt decay constant
    std::size_t warmup_steps = 0;   // only honoured by StandardLN
    Optimizer optimizer = Optimizer::Sgd;
    double mu = 10.0;               // embedder output radius
    std::size_t eval_every = 1;
    std::size_t smoothing = 10;     // eval points in the moving average

    bool operator==(const TrainingConfig&) const = default;
};

struct ExperimentConfig {
    std::vector<SchemeKind> schemes{SchemeKind::DTFixup};
    std::vector<std::size_t> depths{2, 4, 8};
    std::vector<double> mu_targets{10.0};
    std::size_t seq_len = 8;
    std::size_t d_x = 64;
    std::size_t d_z = 16;
    std::size_t n_heads = 4;
    std::size_t mlp_hidden = 128;
    bool relational = false;
    std::size_t n_relations = 0;
    bool share_relations = true;
    std::vector<std::uint64_t> seeds{0};
    double probe_eta = 1e-4;
    double band = 4.0;
    std::size_t threads = 1;
    TrainingConfig training;

    bool operator==(const ExperimentConfig&) const = default;

    EncoderConfig encoder_config(std::size_t n_blocks, bool use_layer_norm) const;
    // Every violated constraint, keyed by config-file field name.
    std::vector<ConfigIssue> issues() const;
    // Throws ConfigError listing every problem.
    void validate() const;
};

// One (scheme, N, mu, seed) cell of a sweep.
struct SweepCell {
    SchemeKind scheme;
    std::size_t n_blocks;
    double mu_target;
    std::uint64_t seed;
};

std::vector<SweepCell> sweep_cells(const ExperimentConfig& config);

// Seed of the Xavier draw for depth N; shared by every scheme so that schemes
// differ only in their scaling.
std::uint64_t weight_seed(std::uint64_t seed, std::size_t n_blocks);

// Probe input shared by every depth and scheme of a (mu, seed) pair.
ProbeInput cell_input(const ExperimentConfig& config, double mu_target, std::uint64_t seed);
// Xavier + scheme; DT-Fixup estimates mu from the cell input.
Encoder cell_encoder(const ExperimentConfig& config, const SweepCell& cell, const ProbeInput& input);
DiagnosticsReport run_cell(const ExperimentConfig& config, const SweepCell& cell);

// Reports come back in sweep_cells() order regardless of thread count.
std::vector<DiagnosticsReport> run_depth_sweep(const ExperimentConfig& config);

// ---- synthetic training task ----------------------------------------------

struct SyntheticTask {
    std::size_t n_tokens = 0;
    std::size_t d_x = 0;
    double mu = 0.0;
    std::vector<std::size_t> permutation;  // token i is scored against token permutation[i]
    Tensor target_map;                     // d_x x outputs
    RelationLabels labels;                 // 1 = partner, 2 = self (when available), else 0
    std::vector<Tensor> train_inputs, train_targets;
    std::vector<Tensor> eval_inputs, eval_targets;
};

SyntheticTask make_task(const ExperimentConfig& config, std::uint64_t seed);

struct CurvePoint {
    std::size_t step;
    double train_loss;
    double eval_loss;
};

struct Curve {
    SchemeKind scheme;
    std::size_t n_blocks;
    std::uint64_t seed;
    std::vector<CurvePoint> points;
    bool diverged = false;

    double initial_eval() const { return points.front().eval_loss; }
    // Trailing moving average of the eval loss over `window` points, one value per point.
    std::vector<double> smoothed_eval(std::size_t window) const;
    double smoothed_final_eval(std::size_t window) const { return smoothed_eval(window).back(); }
    double best_smoothed_eval(std::size_t window) const;
};

inline constexpr double kDivergenceLoss = 1e6;

Curve train_one(const ExperimentConfig& config, SchemeKind scheme, std::size_t n_blocks, std::uint64_t seed);
std::vector<Curve> run_training(const ExperimentConfig& config);

// ---- CSV -------------------------------------------------------------------

std::string diagnostics_csv_header();
std::string diagnostics_csv(const std::vector<DiagnosticsReport>& reports);
std::string curves_csv(const std::vector<Curve>& curves);

// Writes the text to `path`, throwing std::runtime_error with the path on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);
void emit_csv(const std::vector<DiagnosticsReport>& reports, const std::filesystem::path& path);
void emit_csv(const std::vector<Curve>& curves, const std::filesystem::path& path);

// Flat row of diagnostics.csv, as parsed back from disk.
struct DiagnosticsRow {
    std::string scheme;
    bool relational = false;
    std::size_t n_blocks = 0;
    double mu_target = 0.0;
    std::uint64_t seed = 0;
    double jacobian_norm_sq = 0.0;
    double cond_min = 0.0;
    double cond_max = 0.0;
    double cond_times_n_median = 0.0;
    double hidden_drift = 0.0;
    double update_ratio = 0.0;

    bool operator==(const DiagnosticsRow&) const = default;
};

DiagnosticsRow to_row(const DiagnosticsReport& report);
std::vector<DiagnosticsRow> parse_diagnostics_csv(const std::string& text);

} // namespace dtfixup
