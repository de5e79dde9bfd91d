#include "dtfixup/config.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <fmt/format.h>


#ifndef DTFIXUP_VERSION
#define DTFIXUP_VERSION "0.0.0"
#endif

namespace dtfixup {

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
    std::string msg = fmt::format("config has {} error(s):", errors.size());
    for (const auto& e : errors) msg += "\n  " + e;
    return msg;
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// ---- scalar parsers: return nullopt on any malformed input ----------------

std::optional<std::uint64_t> to_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || p != end) return std::nullopt;
    return v;
}

std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<bool> to_bool(std::string_view s) {
    if (s == "true") return true;
    if (s == "false") return false;
    return std::nullopt;
}

std::optional<std::vector<std::string_view>> to_list(std::string_view s) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') return std::nullopt;
    std::vector<std::string_view> items;
    std::string_view body = trim(s.substr(1, s.size() - 2));
    if (body.empty()) return items;
    while (true) {
        const auto comma = body.find(',');
        items.push_back(trim(body.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        body = body.substr(comma + 1);
    }
    return items;
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

template <class T, class F>
std::string fmt_list(const std::vector<T>& xs, F f) {
    std::string out = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + f(xs[i]);
    return out + "]";
}

// ---- field table ----------------------------------------------------------

using Setter = std::function<std::optional<std::string>(ExperimentConfig&, std::string_view)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
    std::string_view key;
    Setter set;
    Getter get;
};

template <class M>
Field size_field(std::string_view key, M member) {
    return {key,
            [member](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
                const auto x = to_u64(v);
                if (!x) return fmt::format("expected a non-negative integer, got '{}'", v);
                std::invoke(member, c) = static_cast<std::size_t>(*x);
                return std::nullopt;
            },
            [member](const ExperimentConfig& c) { return fmt::format("{}", std::invoke(member, c)); }};
}

template <class M>
Field double_field(std::string_view key, M member) {
    return {key,
            [member](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
                const auto x = to_double(v);
                if (!x) return fmt::format("expected a finite number, got '{}'", v);
                std::invoke(member, c) = *x;
                return std::nullopt;
            },
            [member](const ExperimentConfig& c) { return fmt_double(std::invoke(member, c)); }};
}

template <class M>
Field bool_field(std::string_view key, M member) {
    return {key,
            [member](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
                const auto x = to_bool(v);
                if (!x) return fmt::format("expected true or false, got '{}'", v);
                std::invoke(member, c) = *x;
                return std::nullopt;
            },
            [member](const ExperimentConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <class T, class Parse, class Show>
Field list_field(std::string_view key, std::vector<T> ExperimentConfig::*member, Parse parse, Show show,
                 std::string_view what) {
    return {key,
            [=](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
                const auto items = to_list(v);
                if (!items) return fmt::format("expected a list like [a, b], got '{}'", v);
                std::vector<T> out;
                for (auto item : *items) {
                    const auto x = parse(item);
                    if (!x) return fmt::format("list item '{}' is not {}", item, what);
                    out.push_back(*x);
                }
                c.*member = std::move(out);
                return std::nullopt;
            },
            [=](const ExperimentConfig& c) { return fmt_list(c.*member, show); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        using C = ExperimentConfig;
        std::vector<Field> f;
        f.push_back(list_field<SchemeKind>(
            "schemes", &C::schemes, [](std::string_view s) { return parse_scheme(s); },
            [](SchemeKind k) { return std::string(scheme_name(k)); },
            "a scheme (standard_ln, xavier, tfixup, dtfixup)"));
        f.push_back(list_field<std::size_t>(
            "depths", &C::depths,
            [](std::string_view s) -> std::optional<std::size_t> {
                if (auto v = to_u64(s)) return static_cast<std::size_t>(*v);
                return std::nullopt;
            },
            [](std::size_t n) { return fmt::format("{}", n); }, "a non-negative integer"));
        f.push_back(list_field<double>("mu_targets", &C::mu_targets, to_double, fmt_double, "a finite number"));
        f.push_back(size_field("seq_len", &C::seq_len));
        f.push_back(size_field("d_x", &C::d_x));
        f.push_back(size_field("d_z", &C::d_z));
        f.push_back(size_field("n_heads", &C::n_heads));
        f.push_back(size_field("mlp_hidden", &C::mlp_hidden));
        f.push_back(bool_field("relational", &C::relational));
        f.push_back(size_field("n_relations", &C::n_relations));
        f.push_back(bool_field("share_relations", &C::share_relations));
        f.push_back(list_field<std::uint64_t>(
            "seeds", &C::seeds, to_u64, [](std::uint64_t s) { return fmt::format("{}", s); },
            "an unsigned 64-bit integer"));
        f.push_back(double_field("probe_eta", &C::probe_eta));
        f.push_back(double_field("band", &C::band));
        f.push_back(size_field("threads", &C::threads));

        auto t = [](auto m) { return [m](auto& c) -> auto& { return c.training.*m; }; };
        using T = TrainingConfig;
        f.push_back(size_field("train.size", t(&T::train_size)));
        f.push_back(size_field("train.eval_size", t(&T::eval_size)));
        f.push_back(size_field("train.outputs", t(&T::outputs)));
        f.push_back(size_field("train.steps", t(&T::steps)));
        f.push_back(size_field("train.batch_size", t(&T::batch_size)));
        f.push_back(double_field("train.lr", t(&T::learning_rate)));
        f.push_back(double_field("train.decay_steps", t(&T::decay_steps)));
        f.push_back(size_field("train.warmup_steps", t(&T::warmup_steps)));
        f.push_back({"train.optimizer",
                     [](ExperimentConfig& c, std::string_view v) -> std::optional<std::string> {
                         if (v == "sgd")
                             c.training.optimizer = Optimizer::Sgd;
                         else if (v == "adam")
                             c.training.optimizer = Optimizer::Adam;
                         else
                             return fmt::format("expected sgd or adam, got '{}'", v);
                         return std::nullopt;
                     },
                     [](const ExperimentConfig& c) {
                         return std::string(c.training.optimizer == Optimizer::Adam ? "adam" : "sgd");
                     }});
        f.push_back(double_field("train.mu", t(&T::mu)));
        f.push_back(size_field("train.eval_every", t(&T::eval_every)));
        f.push_back(size_field("train.smoothing", t(&T::smoothing)));
        return f;
    }();
    return table;
}

const Field* find_field(std::string_view key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

} // namespace

ConfigParseError::ConfigParseError(std::vector<std::string> errors)
    : ConfigError(join_errors(errors)), errors_(std::move(errors)) {}

const std::vector<std::string_view>& config_keys() {
    static const std::vector<std::string_view> keys = [] {
        std::vector<std::string_view> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig config;
    std::vector<std::string> errors;
    std::map<std::string, std::size_t, std::less<>> seen;  // key -> line

    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            errors.push_back(fmt::format("line {}: expected 'key = value'", line_no));
            continue;
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const Field* field = find_field(key);
        if (field == nullptr) {
            errors.push_back(fmt::format("line {}: unknown key '{}'", line_no, key));
            continue;
        }
        if (const auto it = seen.find(key); it != seen.end()) {
            errors.push_back(fmt::format("line {}: duplicate key '{}' (first set on line {})", line_no, key, it->second));
            continue;
        }
        seen.emplace(std::string(key), line_no);
        if (auto err = field->set(config, value)) errors.push_back(fmt::format("line {}: {}: {}", line_no, key, *err));
    }

    for (const auto& issue : config.issues()) {
        const auto it = seen.find(issue.key);
        if (it != seen.end())
            errors.push_back(fmt::format("line {}: {}: {}", it->second, issue.key, issue.message));
        else
            errors.push_back(fmt::format("(default) {}: {}", issue.key, issue.message));
    }
    if (!errors.empty()) throw ConfigParseError(std::move(errors));
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
    std::ostringstream ss;
    ss << f.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigParseError& e) {
        std::vector<std::string> errs;
        for (const auto& m : e.errors()) errs.push_back(fmt::format("{}: {}", path.string(), m));
        throw ConfigParseError(std::move(errs));
    }
}

std::string serialize_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(config));
    return out;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : serialize_config(config)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash_hex(const ExperimentConfig& config) { return fmt::format("{:016x}", config_hash(config)); }

// ---- manifest --------------------------------------------------------------

std::string tool_version() { return DTFIXUP_VERSION; }

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

RunManifest make_manifest(const ExperimentConfig& config, std::string_view command) {
    RunManifest m;
    m.config_hash = config_hash_hex(config);
    m.tool_version = tool_version();
    m.started = utc_timestamp();
    for (const auto& c : sweep_cells(config)) {
        if (command == "train" && c.mu_target != config.mu_targets.front()) continue;
        const auto label = command == "train"
                               ? fmt::format("{}/N={}/seed={}", scheme_name(c.scheme), c.n_blocks, c.seed)
                               : fmt::format("{}/N={}/mu={}/seed={}", scheme_name(c.scheme), c.n_blocks,
                                             c.mu_target, c.seed);
        m.run_seeds.emplace_back(label, weight_seed(c.seed, c.n_blocks));
    }
    return m;
}

std::string RunManifest::to_text() const {
    std::string out;
    out += fmt::format("config_hash = {}\n", config_hash);
    out += fmt::format("tool_version = {}\n", tool_version);
    out += fmt::format("started = {}\n", started);
    out += fmt::format("finished = {}\n", finished);
    for (const auto& o : outputs) out += fmt::format("output = {}\n", o);
    for (const auto& [label, seed] : run_seeds) out += fmt::format("run {} = {}\n", label, seed);
    return out;
}

// ---- summary ---------------------------------------------------------------

std::string summarize(const std::vector<DiagnosticsReport>& reports, double band) {
    std::vector<DiagnosticsRow> rows;
    for (const auto& r : reports) rows.push_back(to_row(r));
    return summarize(rows, band);
}

std::string summarize(const std::vector<DiagnosticsRow>& rows, double band) {
    if (rows.empty()) throw UsageError("summarize: no reports");

    struct Group {
        std::string scheme;
        bool relational;
        std::size_t n;
        std::vector<double> jac, cond, drift, update;
    };
    std::vector<Group> groups;
    for (const auto& r : rows) {
        auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
            return g.scheme == r.scheme && g.relational == r.relational && g.n == r.n_blocks;
        });
        if (it == groups.end()) {
            groups.push_back({r.scheme, r.relational, r.n_blocks, {}, {}, {}, {}});
            it = std::prev(groups.end());
        }
        it->jac.push_back(r.jacobian_norm_sq);
        it->cond.push_back(r.cond_times_n_median);
        it->drift.push_back(r.hidden_drift);
        it->update.push_back(r.update_ratio);
    }
    std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
        return std::tie(a.scheme, a.relational, a.n) < std::tie(b.scheme, b.relational, b.n);
    });

    auto outside = [&](double v, double ref) {
        if (!(v > 0.0) || !(ref > 0.0)) return true;
        const double r = v / ref;
        return r > band || r < 1.0 / band;
    };
    auto cell = [](double v, bool flag) { return fmt::format("{:>12.4g}{}", v, flag ? " ✗" : "  "); };

    std::string out = fmt::format("{:<12} {:>4} {:>4} {:>6} {:>14} {:>14} {:>14} {:>14}\n", "scheme", "rel", "N",
                                  "seeds", "jacobian", "cond*N", "drift", "update");
    const Group* ref = nullptr;
    for (const auto& g : groups) {
        if (!ref || ref->scheme != g.scheme || ref->relational != g.relational) ref = &g;
        const double jac = median(g.jac), cond = median(g.cond), drift = median(g.drift), upd = median(g.update);
        out += fmt::format("{:<12} {:>4} {:>4} {:>6} {} {} {} {}\n", g.scheme, g.relational ? "yes" : "no", g.n,
                           g.jac.size(), cell(jac, outside(jac, median(ref->jac))),
                           cell(cond, outside(cond, 1.0)), cell(drift, false),
                           cell(upd, outside(upd, median(ref->update))));
    }
    return out;
}

} // namespace dtfixup
