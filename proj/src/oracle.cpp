#include "dtfixup/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dtfixup/errors.hpp"

namespace dtfixup {

void ScalarAttnCase::validate() const {
    if (x.empty()) throw DimensionError("scalar attention case needs at least one token");
    if (query >= x.size()) throw DimensionError(fmt::format("query index {} out of range for {} tokens", query, x.size()));
    if (r_k.size() != x.size() || r_v.size() != x.size())
        throw DimensionError(fmt::format("relation offsets need {} entries (got r_k {}, r_v {})", x.size(), r_k.size(),
                                         r_v.size()));
}

std::vector<double> oracle_weights(const ScalarAttnCase& c) {
    c.validate();
    const std::size_t n = c.x.size();
    const double xq = c.x[c.query] * c.q;
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = xq * (c.k * c.x[i] + c.r_k[i]);
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& e : s) z += (e = std::exp(e - mx));
    for (double& e : s) e /= z;
    return s;
}

double oracle_forward(const ScalarAttnCase& c) {
    const auto s = oracle_weights(c);
    double g = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) g += s[i] * (c.x[i] * c.v + c.r_v[i]);
    return g * c.w;
}

OracleGradients oracle_gradients(const ScalarAttnCase& c) {
    const auto s = oracle_weights(c);
    const std::size_t n = s.size();
    const double xp = c.x[c.query];

    // value_i = x_i v + r^v_i ; key_i = k x_i + r^k_i
    std::vector<double> value(n), key(n);
    double mean_value = 0.0, mean_x = 0.0, mean_key = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        value[i] = c.x[i] * c.v + c.r_v[i];
        key[i] = c.k * c.x[i] + c.r_k[i];
        mean_value += s[i] * value[i];
        mean_x += s[i] * c.x[i];
        mean_key += s[i] * key[i];
    }

    OracleGradients g;
    for (std::size_t i = 0; i < n; ++i) {
        g.dk += value[i] * s[i] * (c.x[i] - mean_x);
        g.dq += value[i] * s[i] * (key[i] - mean_key);
    }
    g.dk *= xp * c.q * c.w;
    g.dq *= xp * c.w;
    g.dv = c.w * mean_x;
    g.dw = mean_value;

    g.dr_k.resize(n);
    g.dr_v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        // logit_i moves with r^k_i at rate x' q; dG/dlogit_i = w s_i (value_i - mean_value)
        g.dr_k[i] = xp * c.q * c.w * s[i] * (value[i] - mean_value);
        g.dr_v[i] = c.w * s[i];
    }

    // dG/dx_i = v w s_i + w sum_j (ds_j/dx_i) value_j
    g.dx.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        if (i != c.query) {
            // ds_j/dx_i = s_j (delta_ij - s_i) x' q k
            for (std::size_t j = 0; j < n; ++j)
                acc += s[j] * ((i == j ? 1.0 : 0.0) - s[i]) * xp * c.q * c.k * value[j];
        } else {
            // x_i is the query: the logit of key j gains q (k x_j + r^k_j) plus
            // the key-side term q k x_i when j == i.
            //   ds_j/dx_i = q((1 + d_ij) k x_j + r^k_j) s_j - sum_t q((1 + d_it) k x_t + r^k_t) s_j s_t
            double centre = 0.0;
            for (std::size_t t = 0; t < n; ++t)
                centre += c.q * ((i == t ? 2.0 : 1.0) * c.k * c.x[t] + c.r_k[t]) * s[t];
            for (std::size_t j = 0; j < n; ++j) {
                const double dlogit = c.q * ((i == j ? 2.0 : 1.0) * c.k * c.x[j] + c.r_k[j]);
                acc += s[j] * (dlogit - centre) * value[j];
            }
        }
        g.dx[i] = c.v * c.w * s[i] + c.w * acc;
    }
    return g;
}

GradientMass gradient_mass(const OracleGradients& g) {
    GradientMass m;
    m.dominant = g.dv * g.dv + g.dw * g.dw;
    for (double d : g.dr_v) m.dominant += d * d;
    m.rest = g.dq * g.dq + g.dk * g.dk;
    for (double d : g.dr_k) m.rest += d * d;
    for (double d : g.dx) m.rest += d * d;
    return m;
}

} // namespace dtfixup
