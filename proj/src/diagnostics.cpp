#include "dtfixup/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"

namespace dtfixup {

Tensor sphere_tokens(std::size_t n_tokens, std::size_t d_x, double radius, Rng& rng) {
    std::vector<double> data(n_tokens * d_x);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        double s = 0.0;
        do {
            s = 0.0;
            for (std::size_t j = 0; j < d_x; ++j) {
                data[i * d_x + j] = rng.normal();
                s += data[i * d_x + j] * data[i * d_x + j];
            }
        } while (s == 0.0);
        const double f = radius / std::sqrt(s);
        for (std::size_t j = 0; j < d_x; ++j) data[i * d_x + j] *= f;
    }
    return {{n_tokens, d_x}, std::move(data)};
}

ProbeInput make_probe_input(std::size_t n_tokens, std::size_t d_x, double mu, std::size_t n_relations, Rng& rng) {
    ProbeInput in;
    in.x = sphere_tokens(n_tokens, d_x, mu, rng);
    if (n_relations > 0) {
        std::vector<std::size_t> labels(n_tokens * n_tokens);
        for (auto& l : labels) l = rng.below(n_relations);
        in.labels = RelationLabels(n_tokens, std::move(labels));
    }
    std::vector<double> u(n_tokens * d_x);
    double s = 0.0;
    for (double& v : u) {
        v = rng.normal();
        s += v * v;
    }
    for (double& v : u) v /= std::sqrt(s);
    in.readout = Tensor({n_tokens, d_x}, std::move(u));
    in.target = rng.normal();
    return in;
}

namespace {

void require_model(const Encoder& encoder) {
    if (encoder.blocks().empty()) throw UsageError("probe: encoder has no parameters (not initialized)");
}

Tensor readout_value(const Tensor& y, const ProbeInput& input) { return sum_all(mul(input.readout, y)); }

} // namespace

JacobianProbe probe_jacobian_norm(const Encoder& encoder, const ProbeInput& input) {
    require_model(encoder);
    Tape tape;
    const Encoder bound = encoder.bind(tape);
    const auto out = encoder_forward(input.x, bound, input.labels_ptr());
    tape.backward(readout_value(out.y, input));

    JacobianProbe probe;
    probe.per_layer.assign(encoder.config().n_layers(), 0.0);
    for (const auto& p : bound.params()) {
        if (!is_analysed_weight(p.kind)) continue;
        const double g = tape.grad(*p.tensor).norm();
        if (p.layer < 0)
            probe.shared += g * g;
        else
            probe.per_layer[static_cast<std::size_t>(p.layer)] += g * g;
    }
    for (double v : probe.per_layer) probe.total += v;
    probe.total += probe.shared;
    return probe;
}

double gain_norm(const Tensor& m) { return m.norm() / std::sqrt(static_cast<double>(m.shape()[0])); }

namespace {

double max_token_norm(const Tensor& x) {
    const auto n = x.row_norms();
    return *std::max_element(n.begin(), n.end());
}

// Contribution of r^v to the concatenated head outputs: every head adds the
// same d_z row, so the RMS row norm is scaled by sqrt(H).
double relation_value_norm(const Tensor& table, std::size_t heads) {
    const auto rows = table.row_norms();
    double s = 0.0;
    for (double r : rows) s += r * r;
    return std::sqrt(s / static_cast<double>(rows.size()) * static_cast<double>(heads));
}

double condition_for_layer(const Encoder& encoder, const Tensor& layer_input, std::size_t layer) {
    const auto& cfg = encoder.config();
    const auto& block = encoder.blocks()[layer / 2];
    const double x = max_token_norm(layer_input);
    const double x2 = x * x;
    if (layer % 2 == 0) {
        double v2 = 0.0;
        for (const auto& h : block.heads) v2 += h.v.norm() * h.v.norm();
        v2 /= static_cast<double>(cfg.d_x);
        const double w = gain_norm(block.w);
        if (!cfg.relational) return v2 * x2 + w * w * x2;
        const double v = std::sqrt(v2);
        const double r = relation_value_norm(encoder.relations_for(layer / 2).value, cfg.n_heads);
        return 2.0 * v2 * x2 + 2.0 * v * r * x + r * r + w * w * (1.0 + 2.0 * x2);
    }
    const double a = gain_norm(block.w1), b = gain_norm(block.w2);
    // relational form with the r^v terms (and the lone ||w||^2) removed
    const double c = a * a * x2 + b * b * x2;
    return cfg.relational ? 2.0 * c : c;
}

} // namespace

std::vector<double> probe_layer_conditions(const Encoder& encoder, const ProbeInput& input) {
    require_model(encoder);
    const auto out = encoder_forward(input.x, encoder, input.labels_ptr());
    std::vector<double> conds(out.layer_inputs.size());
    for (std::size_t l = 0; l < conds.size(); ++l) conds[l] = condition_for_layer(encoder, out.layer_inputs[l], l);
    return conds;
}

double probe_layer_condition(const Encoder& encoder, const ProbeInput& input, std::size_t layer) {
    require_model(encoder);
    if (layer >= encoder.config().n_layers())
        throw UsageError(fmt::format("layer {} out of range (L = {})", layer, encoder.config().n_layers()));
    const auto out = encoder_forward(input.x, encoder, input.labels_ptr());
    return condition_for_layer(encoder, out.layer_inputs[layer], layer);
}

double probe_update_magnitude(const Encoder& encoder, const ProbeInput& input, double eta) {
    require_model(encoder);
    if (!(eta >= kMinProbeEta && eta <= kMaxProbeEta))
        throw UsageError(fmt::format("probe_update_magnitude: eta {} outside [{}, {}]", eta, kMinProbeEta, kMaxProbeEta));

    Tape tape;
    const Encoder bound = encoder.bind(tape);
    const auto out = encoder_forward(input.x, bound, input.labels_ptr());
    const Tensor residual = add(readout_value(out.y, input), Tensor::scalar(-input.target));
    const Tensor loss = scale(mul(residual, residual), 0.5);
    if (!std::isfinite(loss.item())) throw NumericError("probe_update_magnitude: non-finite loss");
    tape.backward(loss);

    Encoder stepped = encoder;
    auto dst = stepped.params();
    const auto src = bound.params();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (!is_analysed_weight(dst[i].kind)) continue;
        const Tensor g = tape.grad(*src[i].tensor);
        std::vector<double> d = dst[i].tensor->to_vector();
        for (std::size_t e = 0; e < d.size(); ++e) d[e] -= eta * g[e];
        *dst[i].tensor = dst[i].tensor->with_data(std::move(d));
    }
    const auto moved = encoder_forward(input.x, stepped, input.labels_ptr());
    const Tensor before = out.y.detach();
    double s = 0.0;
    for (std::size_t e = 0; e < before.size(); ++e) {
        const double d = moved.y[e] - before[e];
        s += d * d;
    }
    // an overflowing step (inf - inf in the difference) is reported as unbounded
    if (!std::isfinite(s)) return std::numeric_limits<double>::infinity();
    return std::sqrt(s) / eta;
}

HiddenRecursion probe_hidden_recursion(const Encoder& encoder, const ProbeInput& input) {
    const auto& cfg = encoder.config();
    const double xi = encoder.scheme() ? encoder.scheme()->xi : 0.0;
    const double xi2 = xi * xi;
    const auto out = encoder_forward(input.x, encoder, input.labels_ptr());

    HiddenRecursion rec;
    double prev = input.x.norm();
    for (std::size_t l = 0; l < out.hidden_norms.size(); ++l) {
        const double offset = cfg.relational && l % 2 == 0 ? xi2 : 0.0;
        const double next = out.hidden_norms[l];
        rec.residuals.push_back(std::abs(next - prev * (1.0 + xi2) - offset));
        prev = next;
    }
    rec.drift = out.hidden_norms.empty() ? 1.0 : out.hidden_norms.back() / input.x.norm();
    return rec;
}

double DiagnosticsReport::cond_min() const {
    return layer_conditions.empty() ? 0.0 : *std::min_element(layer_conditions.begin(), layer_conditions.end());
}

double DiagnosticsReport::cond_max() const {
    return layer_conditions.empty() ? 0.0 : *std::max_element(layer_conditions.begin(), layer_conditions.end());
}

double DiagnosticsReport::cond_times_n_median() const {
    std::vector<double> scaled;
    for (double c : layer_conditions) scaled.push_back(c * static_cast<double>(n_blocks));
    return scaled.empty() ? 0.0 : median(std::move(scaled));
}

DiagnosticsReport run_probes(const Encoder& encoder, const ProbeInput& input, double eta) {
    require_model(encoder);
    DiagnosticsReport r;
    const auto& cfg = encoder.config();
    if (encoder.scheme()) {
        r.scheme = encoder.scheme()->kind;
        r.xi = encoder.scheme()->xi;
        r.mu_estimate = encoder.scheme()->mu;
    }
    r.relational = cfg.relational;
    r.n_blocks = cfg.n_blocks;
    r.jacobian_norm_sq = probe_jacobian_norm(encoder, input).total;
    r.layer_conditions = probe_layer_conditions(encoder, input);
    const auto out = encoder_forward(input.x, encoder, input.labels_ptr());
    r.hidden_norm_trace = out.hidden_norms;
    r.hidden_drift = probe_hidden_recursion(encoder, input).drift;
    r.update_ratio = probe_update_magnitude(encoder, input, eta);
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) throw UsageError("median of empty set");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double spread(std::span<const double> values) {
    if (values.empty()) throw UsageError("spread of empty set");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (!(*lo > 0.0)) return std::numeric_limits<double>::infinity();
    return *hi / *lo;
}

} // namespace dtfixup
