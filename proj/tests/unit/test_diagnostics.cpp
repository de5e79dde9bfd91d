#include <doctest.h>

#include <cmath>
#include <limits>

#include "dtfixup/diagnostics.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/init.hpp"

using namespace dtfixup;

namespace {

EncoderConfig scalar_config() {
    EncoderConfig c;
    c.n_blocks = 1;
    c.d_x = 1;
    c.d_z = 1;
    c.n_heads = 1;
    c.mlp_hidden = 1;
    return c;
}

ProbeInput scalar_input(double x) {
    ProbeInput in;
    in.x = Tensor::from({1, 1}, {x});
    in.readout = Tensor::from({1, 1}, {1.0});
    in.target = 0.5;
    return in;
}

EncoderConfig medium(std::size_t n_blocks, bool relational) {
    EncoderConfig c;
    c.n_blocks = n_blocks;
    c.d_x = 16;
    c.d_z = 4;
    c.n_heads = 2;
    c.mlp_hidden = 32;
    c.relational = relational;
    c.n_relations = relational ? 3 : 0;
    return c;
}

} // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("jacobian of a one-token scalar block") {
    // MLP weights zero: only v and w carry gradient, d/dv = w x, d/dw = v x
    Encoder enc(scalar_config());
    auto& b = enc.blocks()[0];
    b.heads[0].q = Tensor::from({1, 1}, {0.9});
    b.heads[0].k = Tensor::from({1, 1}, {-0.2});
    b.heads[0].v = Tensor::from({1, 1}, {0.3});
    b.w = Tensor::from({1, 1}, {-0.7});
    const double x = 1.7;
    const auto probe = probe_jacobian_norm(enc, scalar_input(x));
    const double expected = (-0.7 * x) * (-0.7 * x) + (0.3 * x) * (0.3 * x);
    CHECK(probe.total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(probe.per_layer.size() == 2);
    CHECK(probe.per_layer[1] == 0.0);
}

TEST_CASE("jacobian needs an initialized encoder") {
    CHECK_THROWS_AS(probe_jacobian_norm(Encoder{}, scalar_input(1.0)), UsageError);
}

TEST_CASE("condition values") {
    Rng rng(2);
    const ProbeInput in = make_probe_input(5, 16, 3.0, 3, rng);
    SUBCASE("all-zero weights") {
        for (bool relational : {false, true}) {
            const Encoder enc(medium(2, relational));
            for (double c : probe_layer_conditions(enc, in)) CHECK(c == 0.0);
        }
    }
    SUBCASE("w-only attention term scales with the square") {
        Rng r(3);
        Encoder enc = build_encoder(medium(1, false), r);
        for (auto& h : enc.blocks()[0].heads) h.v = Tensor::zeros(h.v.shape());
        const double base = probe_layer_condition(enc, in, 0);
        enc.blocks()[0].w = enc.blocks()[0].w.scaled(2.0);
        CHECK(probe_layer_condition(enc, in, 0) == doctest::Approx(4.0 * base).epsilon(1e-12));
        CHECK(base == doctest::Approx(std::pow(gain_norm(enc.blocks()[0].w) / 2, 2) * 9.0).epsilon(1e-12));
    }
    SUBCASE("layer index is checked") {
        Rng r(4);
        const Encoder enc = build_encoder(medium(1, false), r);
        CHECK_THROWS_AS(probe_layer_condition(enc, in, 2), UsageError);
    }
    SUBCASE("DT-Fixup keeps condition x N near one") {
        for (bool relational : {false, true}) {
            for (std::size_t n : {2u, 8u, 32u}) {
                Rng r(n);
                const ProbeInput pin = make_probe_input(6, 16, 10.0, relational ? 3 : 0, r);
                const Encoder enc =
                    initialize(medium(n, relational), make_scheme(SchemeKind::DTFixup, n, relational, 10.0), r);
                for (double c : probe_layer_conditions(enc, pin)) {
                    CHECK(c * static_cast<double>(n) >= 0.25);
                    CHECK(c * static_cast<double>(n) <= 4.0);
                }
            }
        }
    }
}

TEST_CASE("update magnitude") {
    Rng rng(5);
    const ProbeInput in = make_probe_input(4, 16, 5.0, 0, rng);
    SUBCASE("zero gradient gives zero") {
        CHECK(probe_update_magnitude(Encoder(medium(2, false)), in, 1e-3) == 0.0);
    }
    SUBCASE("eta range") {
        const Encoder enc = build_encoder(medium(1, false), rng);
        CHECK_THROWS_AS(probe_update_magnitude(enc, in, 0.0), UsageError);
        CHECK_THROWS_AS(probe_update_magnitude(enc, in, 1e-6), UsageError);
        CHECK_THROWS_AS(probe_update_magnitude(enc, in, 0.1), UsageError);
    }
    SUBCASE("stable under a tenfold change of eta at DT-Fixup init") {
        for (bool relational : {false, true}) {
            Rng r(6);
            const ProbeInput pin = make_probe_input(6, 16, 10.0, relational ? 3 : 0, r);
            const Encoder enc =
                initialize(medium(8, relational), make_scheme(SchemeKind::DTFixup, 8, relational, 10.0), r);
            const double a = probe_update_magnitude(enc, pin, 1e-4);
            const double b = probe_update_magnitude(enc, pin, 1e-5);
            CHECK(std::abs(a - b) <= 0.05 * b);
        }
    }
}

TEST_CASE("hidden recursion and drift") {
    Rng rng(7);
    const ProbeInput in = make_probe_input(4, 16, 5.0, 3, rng);
    const auto zero = probe_hidden_recursion(Encoder(medium(3, true)), in);
    CHECK(zero.drift == 1.0);
    CHECK(zero.residuals.size() == 6);

    const Encoder dt = initialize(medium(16, true), make_scheme(SchemeKind::DTFixup, 16, true, 5.0), rng);
    const double drift = probe_hidden_recursion(dt, in).drift;
    CHECK(drift >= 0.9);
    CHECK(drift <= 1.1);

    const Encoder xavier = initialize(medium(16, true), make_scheme(SchemeKind::Xavier, 16, true), rng);
    CHECK(probe_hidden_recursion(xavier, in).drift >= 1.5);
}

TEST_CASE("probe input") {
    Rng rng(8);
    const ProbeInput in = make_probe_input(5, 7, 3.0, 2, rng);
    for (double n : in.x.row_norms()) CHECK(n == doctest::Approx(3.0));
    CHECK(in.readout.norm() == doctest::Approx(1.0));
    REQUIRE(in.labels.has_value());
    CHECK(in.labels->max_label() < 2);
    CHECK(!make_probe_input(5, 7, 3.0, 0, rng).labels.has_value());
}

TEST_CASE("report") {
    Rng rng(9);
    const ProbeInput in = make_probe_input(4, 16, 5.0, 0, rng);
    const Encoder enc = initialize(medium(4, false), make_scheme(SchemeKind::DTFixup, 4, false, 5.0), rng);
    const auto r = run_probes(enc, in, 1e-4);
    CHECK(r.scheme == SchemeKind::DTFixup);
    CHECK(r.n_blocks == 4);
    CHECK(r.layer_conditions.size() == 8);
    CHECK(r.hidden_norm_trace.size() == 8);
    CHECK(r.cond_min() <= r.cond_max());
    CHECK(r.jacobian_norm_sq > 0.0);
    CHECK(std::isfinite(r.update_ratio));
}

TEST_CASE("median and spread") {
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 2, 3}) == 2.5);
    CHECK_THROWS_AS(median({}), UsageError);
    const double v[] = {1.0, 4.0, 2.0};
    CHECK(spread(v) == 4.0);
    const double z[] = {0.0, 1.0};
    CHECK(spread(z) == std::numeric_limits<double>::infinity());
}

} // TEST_SUITE
