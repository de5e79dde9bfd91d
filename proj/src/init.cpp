#include "dtfixup/init.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"

namespace dtfixup {

std::string_view scheme_name(SchemeKind kind) {
    switch (kind) {
    case SchemeKind::StandardLN: return "standard_ln";
    case SchemeKind::Xavier: return "xavier";
    case SchemeKind::TFixup: return "tfixup";
    case SchemeKind::DTFixup: return "dtfixup";
    }
    return "?";
}

std::optional<SchemeKind> parse_scheme(std::string_view name) {
    for (auto k : {SchemeKind::StandardLN, SchemeKind::Xavier, SchemeKind::TFixup, SchemeKind::DTFixup})
        if (scheme_name(k) == name) return k;
    return std::nullopt;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    if (fan_in == 0 || fan_out == 0)
        throw DimensionError(fmt::format("xavier_init: zero dimension in ({}, {})", fan_in, fan_out));
    const double a = xavier_bound(fan_in, fan_out);
    std::vector<double> data(fan_in * fan_out);
    for (double& v : data) v = rng.uniform(-a, a);
    return {{fan_in, fan_out}, std::move(data)};
}

void MuEstimator::observe(const Tensor& tokens) {
    for (double n : tokens.row_norms()) max_norm_ = std::max(max_norm_, n);
    ++count_;
}

double MuEstimator::value() const {
    if (count_ == 0) throw UsageError("estimate_mu: no examples observed");
    return max_norm_;
}

double estimate_mu(std::span<const Tensor> embedder_outputs) {
    MuEstimator est;
    for (const auto& t : embedder_outputs) est.observe(t);
    return est.value();
}

double dtfixup_scale(std::size_t n_blocks, double mu, bool relational) {
    if (n_blocks < 1) throw ConfigError("dtfixup_scale: N must be >= 1");
    if (!(mu > 0.0)) throw ConfigError(fmt::format("dtfixup_scale: mu must be positive, got {}", mu));
    const double n = static_cast<double>(n_blocks);
    if (relational) return 1.0 / std::sqrt(n * (4.0 * mu * mu + 2.0 * mu + 2.0));
    return 1.0 / (std::sqrt(n) * 2.0 * mu);
}

double tfixup_scale(std::size_t n_blocks) {
    if (n_blocks < 1) throw ConfigError("tfixup_scale: N must be >= 1");
    return 0.67 * std::pow(static_cast<double>(n_blocks), -0.25);
}

InitScheme make_scheme(SchemeKind kind, std::size_t n_blocks, bool relational, double mu) {
    InitScheme s;
    s.kind = kind;
    s.relational = relational;
    switch (kind) {
    case SchemeKind::StandardLN:
    case SchemeKind::Xavier: s.xi = 1.0; break;
    case SchemeKind::TFixup: s.xi = tfixup_scale(n_blocks); break;
    case SchemeKind::DTFixup:
        s.mu = mu;
        s.xi = dtfixup_scale(n_blocks, mu, relational);
        break;
    }
    return s;
}

Encoder build_encoder(const EncoderConfig& config, Rng& rng) {
    Encoder enc(config);
    for (auto& p : enc.params()) {
        if (!is_analysed_weight(p.kind)) continue;
        const auto& s = p.tensor->shape();
        *p.tensor = xavier_init(s[0], s[1], rng);
    }
    return enc;
}

void apply_scheme(Encoder& encoder, const InitScheme& scheme) {
    if (encoder.scaled()) throw UsageError("apply_scheme: encoder was already rescaled");
    const auto& cfg = encoder.config();
    if (scheme.relational != cfg.relational && scheme.kind == SchemeKind::DTFixup)
        throw ConfigError(fmt::format("apply_scheme: {} DT-Fixup scheme on a {} encoder",
                                      scheme.relational ? "relational" : "vanilla",
                                      cfg.relational ? "relational" : "vanilla"));
    if (scheme.uses_layer_norm() != cfg.use_layer_norm)
        throw ConfigError(fmt::format("apply_scheme: scheme {} requires use_layer_norm = {}",
                                      scheme_name(scheme.kind), scheme.uses_layer_norm()));
    if (!(scheme.xi > 0.0) || !std::isfinite(scheme.xi))
        throw ConfigError(fmt::format("apply_scheme: scale factor must be positive, got {}", scheme.xi));

    if (scheme.rescales()) {
        const bool scale_rv = scheme.kind == SchemeKind::DTFixup && cfg.relational;
        for (auto& p : encoder.params()) {
            switch (p.kind) {
            case ParamKind::Value:
            case ParamKind::Output:
            case ParamKind::Mlp1:
            case ParamKind::Mlp2: *p.tensor = p.tensor->scaled(scheme.xi); break;
            case ParamKind::RelValue:
                if (scale_rv) *p.tensor = p.tensor->scaled(scheme.xi);
                break;
            default: break;
            }
        }
    }
    encoder.set_scheme(scheme, scheme.rescales());
}

Encoder initialize(const EncoderConfig& config, const InitScheme& scheme, Rng& rng) {
    Encoder enc = build_encoder(config, rng);
    apply_scheme(enc, scheme);
    return enc;
}

double LrSchedule::at(std::size_t step) const {
    const double t = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    const double warm = step < warmup_steps ? (t + 1.0) / w : 1.0;
    const double after = std::max(0.0, t - w);
    return base * warm / std::sqrt(1.0 + after / decay_steps);
}

LrSchedule schedule_for(const InitScheme& scheme, double base, std::size_t warmup_steps, double decay_steps) {
    LrSchedule s;
    s.base = base;
    s.warmup_steps = scheme.kind == SchemeKind::StandardLN ? warmup_steps : 0;
    s.decay_steps = decay_steps;
    return s;
}

} // namespace dtfixup
