#pragma once

// Numerical probes for the quantities the stability analysis bounds:
//
//   * squared Jacobian norm ||d f_G / d theta_G||^2 summed over layers
//   * per-layer condition values (relational / vanilla forms)
//   * the hidden-norm recursion and final drift ||x_L|| / ||x_1||
//   * output change per SGD step, ||Delta f|| / eta
//
// f_G's output is reduced to a scalar with a fixed unit-norm readout U, so the
// tape yields d<U, f_G>/d theta.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtfixup/rng.hpp"
#include "dtfixup/scheme.hpp"
#include "dtfixup/tensor.hpp"
#include "dtfixup/transformer.hpp"

namespace dtfixup {

struct ProbeInput {
    Tensor x;                              // n x d_x tokens
    std::optional<RelationLabels> labels;  // required for relational encoders
    Tensor readout;                        // n x d_x, unit Frobenius norm
    double target = 0.0;                   // scalar target of the update-probe loss

    const RelationLabels* labels_ptr() const { return labels ? &*labels : nullptr; }
};

// Tokens uniform on the sphere of radius mu; labels uniform in [0, n_relations).
ProbeInput make_probe_input(std::size_t n_tokens, std::size_t d_x, double mu, std::size_t n_relations, Rng& rng);

// Rows drawn uniformly on the sphere of radius `radius`.
Tensor sphere_tokens(std::size_t n_tokens, std::size_t d_x, double radius, Rng& rng);

struct JacobianProbe {
    double total = 0.0;               // sum over all analysed weight blocks
    std::vector<double> per_layer;    // L entries
    double shared = 0.0;              // shared relation tables
};

JacobianProbe probe_jacobian_norm(const Encoder& encoder, const ProbeInput& input);

// Norm of a weight matrix as a linear map: ||M||_F / sqrt(fan_in).
double gain_norm(const Tensor& m);

std::vector<double> probe_layer_conditions(const Encoder& encoder, const ProbeInput& input);
double probe_layer_condition(const Encoder& encoder, const ProbeInput& input, std::size_t layer);

inline constexpr double kMinProbeEta = 1e-5;
inline constexpr double kMaxProbeEta = 1e-2;

// One SGD step on the analysed weights with loss 0.5 (<U, f> - target)^2;
// returns ||f(theta - eta grad) - f(theta)|| / eta, or +inf when the stepped
// output overflows. NumericError when the loss itself is not finite.
double probe_update_magnitude(const Encoder& encoder, const ProbeInput& input, double eta);

struct HiddenRecursion {
    std::vector<double> residuals;  // one per layer
    double drift = 1.0;             // ||x_L|| / ||x_1||
};

HiddenRecursion probe_hidden_recursion(const Encoder& encoder, const ProbeInput& input);

struct DiagnosticsReport {
    SchemeKind scheme = SchemeKind::DTFixup;
    bool relational = false;
    std::size_t n_blocks = 0;
    double mu_target = 0.0;
    std::uint64_t seed = 0;
    double xi = 0.0;
    double mu_estimate = 0.0;
    double jacobian_norm_sq = 0.0;
    std::vector<double> layer_conditions;
    std::vector<double> hidden_norm_trace;
    double hidden_drift = 1.0;
    double update_ratio = 0.0;

    double cond_min() const;
    double cond_max() const;
    double cond_times_n_median() const;
};

DiagnosticsReport run_probes(const Encoder& encoder, const ProbeInput& input, double eta);

double median(std::vector<double> values);
// max / min of positive values; the finite proxy for a Theta(1) claim.
double spread(std::span<const double> values);

} // namespace dtfixup
