#pragma once

// Initialization schemes: Xavier baselines, T-Fixup, and DT-Fixup with its
// data-dependent estimate of the input norm mu.

#include <cstddef>
#include <span>

#include "dtfixup/rng.hpp"
#include "dtfixup/scheme.hpp"
#include "dtfixup/tensor.hpp"
#include "dtfixup/transformer.hpp"

namespace dtfixup {

// Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

// Running maximum of per-token Euclidean norms over a stream of n x d inputs.
class MuEstimator {
public:
    void observe(const Tensor& tokens);
    bool empty() const { return count_ == 0; }
    std::size_t examples() const { return count_; }
    // Throws UsageError when nothing was observed.
    double value() const;

private:
    double max_norm_ = 0.0;
    std::size_t count_ = 0;
};

double estimate_mu(std::span<const Tensor> embedder_outputs);

// (N (4 mu^2 + 2 mu + 2))^{-1/2} for relational stacks, N^{-1/2} / (2 mu) for vanilla.
double dtfixup_scale(std::size_t n_blocks, double mu, bool relational);
// 0.67 N^{-1/4}
double tfixup_scale(std::size_t n_blocks);

// Scheme descriptor with its scale factor filled in. `mu` is only read for DTFixup.
InitScheme make_scheme(SchemeKind kind, std::size_t n_blocks, bool relational, double mu = 0.0);

// Xavier on every weight (q, k, v, w, W1, W2, r^k, r^v); biases zero; LN gains one.
Encoder build_encoder(const EncoderConfig& config, Rng& rng);

// Multiply v, w, W1, W2 of every block (and r^v under relational DT-Fixup) by
// scheme.xi. q, k and r^k keep their Xavier scale. Throws ConfigError when the
// scheme does not fit the encoder, UsageError when already scaled.
void apply_scheme(Encoder& encoder, const InitScheme& scheme);

// Xavier init followed by apply_scheme.
Encoder initialize(const EncoderConfig& config, const InitScheme& scheme, Rng& rng);

// Learning-rate schedule. Step t (0-based):
//   lr(t) = base * warm(t) / sqrt(1 + max(0, t - warmup) / decay_steps)
// with warm(t) = (t + 1) / warmup during warmup and 1 after.
struct LrSchedule {
    double base = 1e-2;
    std::size_t warmup_steps = 0;
    double decay_steps = 100.0;

    double at(std::size_t step) const;
};

// StandardLN keeps linear warmup; the Fixup-family schemes drop it.
LrSchedule schedule_for(const InitScheme& scheme, double base, std::size_t warmup_steps, double decay_steps);

} // namespace dtfixup
