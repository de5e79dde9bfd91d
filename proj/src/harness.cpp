#include "dtfixup/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"
#include "dtfixup/init.hpp"
#include "dtfixup/log.hpp"

namespace dtfixup {

namespace {

// Stream tags mixed into derive_seed so the input, weights and batches of a
// run never share a generator.
constexpr std::uint64_t kInputStream = 0x11;
constexpr std::uint64_t kWeightStream = 0x22;
constexpr std::uint64_t kTaskStream = 0x33;
constexpr std::uint64_t kBatchStream = 0x44;

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

} // namespace

EncoderConfig ExperimentConfig::encoder_config(std::size_t n_blocks, bool use_layer_norm) const {
    EncoderConfig c;
    c.n_blocks = n_blocks;
    c.d_x = d_x;
    c.d_z = d_z;
    c.n_heads = n_heads;
    c.mlp_hidden = mlp_hidden;
    c.relational = relational;
    c.use_layer_norm = use_layer_norm;
    c.n_relations = relational ? n_relations : 0;
    c.share_relations = share_relations;
    return c;
}

std::vector<ConfigIssue> ExperimentConfig::issues() const {
    std::vector<ConfigIssue> out;
    auto bad = [&](std::string key, std::string msg) { out.push_back({std::move(key), std::move(msg)}); };

    if (schemes.empty()) bad("schemes", "must list at least one scheme");
    if (depths.empty()) bad("depths", "must list at least one depth");
    for (auto n : depths)
        if (n < 1) bad("depths", fmt::format("depth {} out of range (N >= 1)", n));
    if (!std::is_sorted(depths.begin(), depths.end())) bad("depths", "must be sorted ascending");
    if (mu_targets.empty()) bad("mu_targets", "must list at least one radius");
    for (double m : mu_targets)
        if (!(m > 0.0) || !std::isfinite(m)) bad("mu_targets", fmt::format("radius {} out of range (> 0)", m));
    if (seeds.empty()) bad("seeds", "must list at least one seed");
    if (seq_len < 1) bad("seq_len", "must be >= 1");
    if (d_x < 1) bad("d_x", "must be >= 1");
    if (d_z < 1) bad("d_z", "must be >= 1");
    if (n_heads < 1) bad("n_heads", "must be >= 1");
    if (mlp_hidden < 1) bad("mlp_hidden", "must be >= 1");
    if (relational && n_relations < 1) bad("n_relations", "relational stacks need n_relations >= 1");
    if (!(probe_eta >= kMinProbeEta && probe_eta <= kMaxProbeEta))
        bad("probe_eta", fmt::format("{} outside [{}, {}]", probe_eta, kMinProbeEta, kMaxProbeEta));
    if (!(band > 1.0) || !std::isfinite(band)) bad("band", "must be a finite ratio > 1");
    if (threads < 1) bad("threads", "must be >= 1");

    const auto& t = training;
    if (t.train_size < 1) bad("train.size", "must be >= 1");
    if (t.eval_size < 1) bad("train.eval_size", "must be >= 1");
    if (t.outputs < 1) bad("train.outputs", "must be >= 1");
    if (t.batch_size < 1) bad("train.batch_size", "must be >= 1");
    if (t.batch_size > t.train_size) bad("train.batch_size", "must not exceed train.size");
    if (!(t.learning_rate > 0.0) || !std::isfinite(t.learning_rate)) bad("train.lr", "must be > 0");
    if (!(t.decay_steps > 0.0) || !std::isfinite(t.decay_steps)) bad("train.decay_steps", "must be > 0");
    if (!(t.mu > 0.0) || !std::isfinite(t.mu)) bad("train.mu", "must be > 0");
    if (t.eval_every < 1) bad("train.eval_every", "must be >= 1");
    if (t.smoothing < 1) bad("train.smoothing", "must be >= 1");
    return out;
}

void ExperimentConfig::validate() const {
    const auto list = issues();
    if (list.empty()) return;
    std::string msg = "invalid experiment config:";
    for (const auto& i : list) msg += fmt::format("\n  {}: {}", i.key, i.message);
    throw ConfigError(msg);
}

// ---- sweep -----------------------------------------------------------------

std::vector<SweepCell> sweep_cells(const ExperimentConfig& config) {
    std::vector<SweepCell> cells;
    for (auto s : config.schemes)
        for (auto n : config.depths)
            for (double mu : config.mu_targets)
                for (auto seed : config.seeds) cells.push_back({s, n, mu, seed});
    return cells;
}

std::uint64_t weight_seed(std::uint64_t seed, std::size_t n_blocks) {
    return derive_seed(seed, {kWeightStream, n_blocks});
}

ProbeInput cell_input(const ExperimentConfig& config, double mu_target, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {kInputStream, bits(mu_target)}));
    return make_probe_input(config.seq_len, config.d_x, mu_target, config.relational ? config.n_relations : 0, rng);
}

Encoder cell_encoder(const ExperimentConfig& config, const SweepCell& cell, const ProbeInput& input) {
    const auto enc_cfg = config.encoder_config(cell.n_blocks, cell.scheme == SchemeKind::StandardLN);
    Rng rng(weight_seed(cell.seed, cell.n_blocks));
    Encoder enc = build_encoder(enc_cfg, rng);
    const Tensor sample[] = {input.x};
    const double mu = cell.scheme == SchemeKind::DTFixup ? estimate_mu(sample) : 0.0;
    apply_scheme(enc, make_scheme(cell.scheme, cell.n_blocks, config.relational, mu));
    return enc;
}

DiagnosticsReport run_cell(const ExperimentConfig& config, const SweepCell& cell) {
    const ProbeInput input = cell_input(config, cell.mu_target, cell.seed);
    const Encoder enc = cell_encoder(config, cell, input);
    DiagnosticsReport r = run_probes(enc, input, config.probe_eta);
    r.scheme = cell.scheme;
    r.mu_target = cell.mu_target;
    r.seed = cell.seed;
    return r;
}

namespace {

// Runs job(i) for i in [0, count) on up to `threads` workers. The first
// exception stops further dispatch and is rethrown on the caller.
template <class Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (!failed) {
                const std::size_t i = next++;
                if (i >= count) return;
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace

std::vector<DiagnosticsReport> run_depth_sweep(const ExperimentConfig& config) {
    config.validate();
    const auto cells = sweep_cells(config);
    logger()->info("sweep: {} cells on {} thread(s)", cells.size(), config.threads);
    std::vector<DiagnosticsReport> reports(cells.size());
    std::atomic<std::size_t> done{0};
    parallel_for(cells.size(), config.threads, [&](std::size_t i) {
        const auto& c = cells[i];
        reports[i] = run_cell(config, c);
        logger()->debug("cell {}/{}: {} N={} mu={} seed={} J={:.4g} drift={:.4f}", ++done, cells.size(),
                        scheme_name(c.scheme), c.n_blocks, c.mu_target, c.seed, reports[i].jacobian_norm_sq,
                        reports[i].hidden_drift);
    });
    return reports;
}

// ---- synthetic task --------------------------------------------------------

SyntheticTask make_task(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    const auto& tc = config.training;
    const std::size_t n = config.seq_len, d = config.d_x;
    Rng rng(derive_seed(seed, {kTaskStream}));

    SyntheticTask task;
    task.n_tokens = n;
    task.d_x = d;
    task.mu = tc.mu;

    // Random cyclic derangement, so no token is its own partner (when n > 1).
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    task.permutation.assign(n, 0);
    for (std::size_t k = 0; k < n; ++k) task.permutation[order[k]] = order[(k + 1) % n];

    std::vector<double> pos(n * d);
    for (double& p : pos) p = rng.normal();

    std::vector<double> a(d * tc.outputs);
    for (double& v : a) v = rng.normal() / tc.mu;
    task.target_map = Tensor({d, tc.outputs}, std::move(a));

    std::vector<std::size_t> labels(n * n, 0);
    const std::size_t n_rel = config.relational ? config.n_relations : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (n_rel > 1) labels[i * n + task.permutation[i]] = 1;
        if (n_rel > 2) labels[i * n + i] = 2;
    }
    task.labels = RelationLabels(n, std::move(labels));

    auto sample = [&](std::vector<Tensor>& xs, std::vector<Tensor>& ys, std::size_t count) {
        for (std::size_t s = 0; s < count; ++s) {
            std::vector<double> x(n * d);
            for (std::size_t i = 0; i < n; ++i) {
                double sq = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    x[i * d + j] = rng.normal() + pos[i * d + j];
                    sq += x[i * d + j] * x[i * d + j];
                }
                const double f = tc.mu / std::sqrt(sq);
                for (std::size_t j = 0; j < d; ++j) x[i * d + j] *= f;
            }
            std::vector<double> partner(n * d);
            for (std::size_t i = 0; i < n; ++i)
                std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(task.permutation[i] * d), d,
                            partner.begin() + static_cast<std::ptrdiff_t>(i * d));
            xs.emplace_back(Shape{n, d}, std::move(x));
            ys.push_back(matmul(Tensor({n, d}, std::move(partner)), task.target_map));
        }
    };
    sample(task.train_inputs, task.train_targets, tc.train_size);
    sample(task.eval_inputs, task.eval_targets, tc.eval_size);
    return task;
}

// ---- training --------------------------------------------------------------

std::vector<double> Curve::smoothed_eval(std::size_t window) const {
    if (points.empty()) throw UsageError("smoothed_eval: empty curve");
    window = std::max<std::size_t>(1, window);
    std::vector<double> out;
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        acc += points[i].eval_loss;
        if (i >= window) acc -= points[i - window].eval_loss;
        out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
    }
    return out;
}

double Curve::best_smoothed_eval(std::size_t window) const {
    const auto s = smoothed_eval(window);
    return *std::min_element(s.begin(), s.end());
}

namespace {

struct Trainable {
    Encoder encoder;
    Tensor readout;  // d_x x outputs, prediction = (f / mu) readout
};

// Mean squared error over every token and output, averaged over the examples.
Tensor batch_loss(const Trainable& model, const SyntheticTask& task, const std::vector<Tensor>& xs,
                  const std::vector<Tensor>& ys, std::span<const std::size_t> index) {
    const RelationLabels* labels = model.encoder.config().relational ? &task.labels : nullptr;
    Tensor total;
    for (std::size_t k = 0; k < index.size(); ++k) {
        const auto i = index[k];
        const Tensor f = encoder_forward(xs[i], model.encoder, labels).y;
        const Tensor err = sub(matmul(scale(f, 1.0 / task.mu), model.readout), ys[i]);
        const Tensor mse = scale(sum_all(mul(err, err)), 1.0 / static_cast<double>(err.size()));
        total = k == 0 ? mse : add(total, mse);
    }
    return scale(total, 1.0 / static_cast<double>(index.size()));
}

double eval_loss(const Trainable& model, const SyntheticTask& task) {
    std::vector<std::size_t> all(task.eval_inputs.size());
    std::iota(all.begin(), all.end(), 0);
    return batch_loss(model, task, task.eval_inputs, task.eval_targets, all).item();
}

bool diverging(double loss) { return !std::isfinite(loss) || loss > kDivergenceLoss; }

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t t = 0;
};

} // namespace

Curve train_one(const ExperimentConfig& config, SchemeKind scheme, std::size_t n_blocks, std::uint64_t seed) {
    config.validate();
    const auto& tc = config.training;
    const SyntheticTask task = make_task(config, seed);

    Trainable model;
    {
        Rng rng(weight_seed(seed, n_blocks));
        model.encoder = build_encoder(config.encoder_config(n_blocks, scheme == SchemeKind::StandardLN), rng);
        const double mu = scheme == SchemeKind::DTFixup ? estimate_mu(task.train_inputs) : 0.0;
        const InitScheme s = make_scheme(scheme, n_blocks, config.relational, mu);
        apply_scheme(model.encoder, s);
        model.readout = Tensor::zeros({config.d_x, tc.outputs});
    }
    const InitScheme& applied = *model.encoder.scheme();
    const LrSchedule lr = schedule_for(applied, tc.learning_rate, tc.warmup_steps, tc.decay_steps);
    Rng batch_rng(derive_seed(seed, {kBatchStream, n_blocks, static_cast<std::uint64_t>(scheme)}));

    Curve curve{scheme, n_blocks, seed, {}, false};
    AdamState adam;
    std::vector<std::size_t> batch(tc.batch_size);

    for (std::size_t step = 0;; ++step) {
        for (auto& b : batch) b = batch_rng.below(task.train_inputs.size());
        const bool record = step % tc.eval_every == 0 || step == tc.steps;

        Tape tape;
        Trainable bound{model.encoder.bind(tape), tape.leaf(model.readout)};
        const Tensor loss = batch_loss(bound, task, task.train_inputs, task.train_targets, batch);
        const double train = loss.item();

        if (record || diverging(train)) {
            const double ev = eval_loss(model, task);
            curve.points.push_back({step, train, ev});
            if (diverging(train) || diverging(ev)) {
                curve.diverged = true;
                logger()->info("train: {} N={} seed={} diverged at step {}", scheme_name(scheme), n_blocks, seed, step);
                break;
            }
        }
        if (step == tc.steps) break;

        tape.backward(loss);
        auto dst = model.encoder.params();
        const auto src = bound.encoder.params();
        std::vector<std::pair<Tensor*, Tensor>> updates;
        for (std::size_t i = 0; i < dst.size(); ++i) updates.emplace_back(dst[i].tensor, tape.grad(*src[i].tensor));
        updates.emplace_back(&model.readout, tape.grad(bound.readout));

        const double rate = lr.at(step);
        if (tc.optimizer == Optimizer::Adam) {
            constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            if (adam.m.empty()) {
                for (const auto& [p, g] : updates) {
                    adam.m.emplace_back(g.size(), 0.0);
                    adam.v.emplace_back(g.size(), 0.0);
                }
            }
            ++adam.t;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
            for (std::size_t u = 0; u < updates.size(); ++u) {
                auto& [p, g] = updates[u];
                std::vector<double> d = p->to_vector();
                for (std::size_t e = 0; e < d.size(); ++e) {
                    adam.m[u][e] = b1 * adam.m[u][e] + (1 - b1) * g[e];
                    adam.v[u][e] = b2 * adam.v[u][e] + (1 - b2) * g[e] * g[e];
                    d[e] -= rate * (adam.m[u][e] / c1) / (std::sqrt(adam.v[u][e] / c2) + eps);
                }
                *p = p->with_data(std::move(d));
            }
        } else {
            for (auto& [p, g] : updates) {
                std::vector<double> d = p->to_vector();
                for (std::size_t e = 0; e < d.size(); ++e) d[e] -= rate * g[e];
                *p = p->with_data(std::move(d));
            }
        }
        if (record && step % 100 == 0)
            logger()->debug("train: {} N={} step {} train={:.6g} eval={:.6g}", scheme_name(scheme), n_blocks, step,
                            train, curve.points.back().eval_loss);
    }
    return curve;
}

std::vector<Curve> run_training(const ExperimentConfig& config) {
    config.validate();
    std::vector<std::tuple<SchemeKind, std::size_t, std::uint64_t>> runs;
    for (auto s : config.schemes)
        for (auto n : config.depths)
            for (auto seed : config.seeds) runs.emplace_back(s, n, seed);
    logger()->info("train: {} run(s) of {} steps on {} thread(s)", runs.size(), config.training.steps, config.threads);
    std::vector<Curve> curves(runs.size());
    parallel_for(runs.size(), config.threads, [&](std::size_t i) {
        const auto& [s, n, seed] = runs[i];
        curves[i] = train_one(config, s, n, seed);
    });
    return curves;
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

} // namespace

std::string diagnostics_csv_header() {
    return "scheme,relational,N,mu_target,seed,jacobian_norm_sq,cond_min,cond_max,cond_times_N_median,"
           "hidden_drift,update_ratio\n";
}

DiagnosticsRow to_row(const DiagnosticsReport& r) {
    return {std::string(scheme_name(r.scheme)),
            r.relational,
            r.n_blocks,
            r.mu_target,
            r.seed,
            r.jacobian_norm_sq,
            r.cond_min(),
            r.cond_max(),
            r.cond_times_n_median(),
            r.hidden_drift,
            r.update_ratio};
}

std::string diagnostics_csv(const std::vector<DiagnosticsReport>& reports) {
    std::string out = diagnostics_csv_header();
    for (const auto& r : reports) {
        const auto row = to_row(r);
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", row.scheme, row.relational ? 1 : 0, row.n_blocks,
                           num(row.mu_target), row.seed, num(row.jacobian_norm_sq), num(row.cond_min),
                           num(row.cond_max), num(row.cond_times_n_median), num(row.hidden_drift),
                           num(row.update_ratio));
    }
    return out;
}

std::string curves_csv(const std::vector<Curve>& curves) {
    std::string out = "scheme,N,seed,step,train_loss,eval_loss,diverged\n";
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            const auto& p = c.points[i];
            const bool marker = c.diverged && i + 1 == c.points.size();
            out += fmt::format("{},{},{},{},{},{},{}\n", scheme_name(c.scheme), c.n_blocks, c.seed, p.step,
                               num(p.train_loss), num(p.eval_loss), marker ? 1 : 0);
        }
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.close();
    if (!f) throw std::runtime_error(fmt::format("write to '{}' failed", path.string()));
}

void emit_csv(const std::vector<DiagnosticsReport>& reports, const std::filesystem::path& path) {
    write_text_file(path, diagnostics_csv(reports));
}

void emit_csv(const std::vector<Curve>& curves, const std::filesystem::path& path) {
    write_text_file(path, curves_csv(curves));
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

double parse_double(const std::string& s, std::size_t line) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty())
        throw std::runtime_error(fmt::format("diagnostics.csv line {}: '{}' is not a number", line, s));
    return v;
}

std::uint64_t parse_u64(const std::string& s, std::size_t line) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s.front() == '-')
        throw std::runtime_error(fmt::format("diagnostics.csv line {}: '{}' is not an unsigned integer", line, s));
    return v;
}

} // namespace

std::vector<DiagnosticsRow> parse_diagnostics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line + "\n" != diagnostics_csv_header())
        throw std::runtime_error("diagnostics.csv: missing or unexpected header");
    std::vector<DiagnosticsRow> rows;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        const auto c = split(line, ',');
        if (c.size() != 11)
            throw std::runtime_error(fmt::format("diagnostics.csv line {}: expected 11 fields, got {}", no, c.size()));
        DiagnosticsRow r;
        r.scheme = c[0];
        r.relational = parse_u64(c[1], no) != 0;
        r.n_blocks = parse_u64(c[2], no);
        r.mu_target = parse_double(c[3], no);
        r.seed = parse_u64(c[4], no);
        r.jacobian_norm_sq = parse_double(c[5], no);
        r.cond_min = parse_double(c[6], no);
        r.cond_max = parse_double(c[7], no);
        r.cond_times_n_median = parse_double(c[8], no);
        r.hidden_drift = parse_double(c[9], no);
        r.update_ratio = parse_double(c[10], no);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace dtfixup
