#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dtfixup/checks.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/oracle.hpp"
#include "dtfixup/rng.hpp"

using namespace dtfixup;

TEST_SUITE("oracle") {

TEST_CASE("single token") {
    const ScalarAttnCase c{{2.0}, 0, 0.3, -0.7, 1.5, 0.5, {0.0}, {0.25}};
    CHECK(oracle_weights(c)[0] == 1.0);
    // (x v + r^v) w
    CHECK(oracle_forward(c) == doctest::Approx((2.0 * 1.5 + 0.25) * 0.5).epsilon(1e-15));
    const auto g = oracle_gradients(c);
    CHECK(g.dq == 0.0);
    CHECK(g.dk == 0.0);
    CHECK(g.dv == doctest::Approx(1.0));
    CHECK(g.dw == doctest::Approx(3.25));
    CHECK(g.dr_v[0] == doctest::Approx(0.5));
}

TEST_CASE("two tokens with equal logits average the values") {
    ScalarAttnCase c{{1.0, -1.0}, 0, 0.0, 1.0, 2.0, 1.0, {0.0, 0.0}, {0.0, 0.0}};
    CHECK(oracle_forward(c) == doctest::Approx(0.0));
    c.r_v = {1.0, 3.0};
    CHECK(oracle_forward(c) == doctest::Approx(2.0));
}

TEST_CASE("validation") {
    ScalarAttnCase c{{1.0, 2.0}, 2, 1, 1, 1, 1, {0, 0}, {0, 0}};
    CHECK_THROWS_AS(c.validate(), DimensionError);
    c.query = 0;
    c.r_k = {0};
    CHECK_THROWS_AS(oracle_forward(c), DimensionError);
    CHECK_THROWS_AS(oracle_forward(ScalarAttnCase{}), DimensionError);
}

TEST_CASE("large logits stay finite") {
    const ScalarAttnCase c{{50.0, -50.0, 10.0}, 0, 3.0, 3.0, 1.0, 1.0, {0, 0, 0}, {0, 0, 0}};
    const auto s = oracle_weights(c);
    CHECK(std::isfinite(oracle_forward(c)));
    CHECK(s[0] == doctest::Approx(1.0));
}

TEST_CASE("closed form agrees with its own finite differences") {
    const auto r = checks::check_oracle_self_consistency(100, 41);
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("autodiff of the scalar relational layer matches the closed form") {
    const auto r = checks::check_oracle_equivalence(100, 43);
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("v, w and r^v carry the gradient mass at small scale and large inputs") {
    // xi <= 0.05 on v, w, r^v; q, k, r^k at unit scale; |x_i| in [5, 10].
    // Median over 20 seeds: a single draw can lose dv and dw to cancellation in sum_i s_i x_i.
    Rng rng(47);
    for (int batch = 0; batch < 10; ++batch) {
        std::vector<double> fractions;
        for (int seed = 0; seed < 20; ++seed) {
            const std::size_t n = 2 + rng.below(5);
            const double xi = rng.uniform(0.001, 0.05);
            ScalarAttnCase c;
            c.query = rng.below(n);
            for (std::size_t i = 0; i < n; ++i) {
                c.x.push_back((rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(5, 10));
                c.r_k.push_back(rng.uniform(-1, 1));
                c.r_v.push_back(xi * rng.uniform(-1, 1));
            }
            c.q = rng.uniform(-1, 1);
            c.k = rng.uniform(-1, 1);
            c.v = xi * rng.uniform(-1, 1);
            c.w = xi * rng.uniform(-1, 1);
            fractions.push_back(gradient_mass(oracle_gradients(c)).dominant_fraction());
        }
        std::sort(fractions.begin(), fractions.end());
        const double median = 0.5 * (fractions[9] + fractions[10]);
        INFO("batch " << batch << " median dominant fraction " << median);
        CHECK(median > 0.95);
    }
}

} // TEST_SUITE
