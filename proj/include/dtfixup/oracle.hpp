#pragma once

// Closed-form scalar (d_x = 1) relational attention for one query token:
//
//   s_i  = exp(x' q (k x_i + r^k_i)) / sum_j exp(x' q (k x_j + r^k_j))
//   G(x') = sum_i s_i (x_i v + r^v_i) w
//
// together with its analytic gradients. Used as an exact reference for the
// autodiff engine.

#include <cstddef>
#include <vector>

namespace dtfixup {

struct ScalarAttnCase {
    std::vector<double> x;        // token scalars
    std::size_t query = 0;        // index of x' among the tokens
    double q = 0.0, k = 0.0, v = 0.0, w = 0.0;
    std::vector<double> r_k;      // per-key relation offsets r^k_i
    std::vector<double> r_v;      // per-key relation offsets r^v_i

    // Throws DimensionError on size mismatch or out-of-range query.
    void validate() const;
};

struct OracleGradients {
    double dq = 0.0, dk = 0.0, dv = 0.0, dw = 0.0;
    std::vector<double> dr_k, dr_v, dx;
};

// Softmax weights s_i (max-subtracted).
std::vector<double> oracle_weights(const ScalarAttnCase& c);
double oracle_forward(const ScalarAttnCase& c);
OracleGradients oracle_gradients(const ScalarAttnCase& c);

// The squared-gradient terms of a single-layer update, split into the three
// lowest-power terms (v, w, r^v) and the rest (q, k, r^k, x).
struct GradientMass {
    double dominant = 0.0;
    double rest = 0.0;
    double dominant_fraction() const { return dominant / (dominant + rest); }
};
GradientMass gradient_mass(const OracleGradients& g);

} // namespace dtfixup
