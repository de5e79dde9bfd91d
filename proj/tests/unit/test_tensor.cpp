#include <doctest.h>

#include <cmath>
#include <thread>

#include "dtfixup/checks.hpp"
#include "dtfixup/errors.hpp"
#include "dtfixup/rng.hpp"
#include "dtfixup/tensor.hpp"

using namespace dtfixup;

namespace {

void check_values(const Tensor& t, std::vector<double> expected, double tol = 0.0) {
    REQUIRE(t.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (tol == 0.0)
            CHECK(t[i] == expected[i]);
        else
            CHECK(t[i] == doctest::Approx(expected[i]).epsilon(tol));
    }
}

} // namespace

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape and size") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
    const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6);
    CHECK(!t.on_tape());
    CHECK_THROWS_AS(t.item(), DimensionError);
}

TEST_CASE("matmul") {
    SUBCASE("identity") {
        check_values(matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 2}, {3, 4, 5, 6})), {3, 4, 5, 6});
    }
    SUBCASE("row times column") {
        const Tensor c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
        CHECK(c.shape() == Shape{1, 1});
        CHECK(c.item() == 11);
    }
    SUBCASE("batched") {
        const Tensor a = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
        const Tensor b = Tensor::from({2, 2, 1}, {1, 1, 2, 0});
        check_values(matmul(a, b), {3, 6});
    }
    SUBCASE("shape mismatch names both shapes") {
        try {
            matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2, 3]") != std::string::npos);
        }
    }
    SUBCASE("gradient of sum(AB) w.r.t. A") {
        // frozen from central differences (step 1e-6) of sum(AB) at this point
        Tape tape;
        const Tensor a = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
        const Tensor b = Tensor::from({2, 2}, {1, 1, 1, 1});
        tape.backward(sum_all(matmul(a, b)));
        check_values(tape.grad(a), {2, 2, 2, 2}, 1e-12);
        const Tensor inputs[] = {Tensor::from({2, 2}, {1, 2, 3, 4})};
        const auto numeric = checks::numeric_gradients(
            [&](std::span<const Tensor> in) { return sum_all(matmul(in[0], b)); }, inputs);
        check_values(numeric[0], {2, 2, 2, 2}, 1e-8);
    }
}

TEST_CASE("softmax_rows") {
    check_values(softmax_rows(Tensor::from({1, 2}, {0, 0})), {0.5, 0.5});
    const Tensor big = softmax_rows(Tensor::from({1, 2}, {1000, 0}));
    CHECK(big.all_finite());
    CHECK(big[0] == 1.0);
    CHECK(big[1] < 1e-300);
    check_values(softmax_rows(Tensor::from({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)})),
                 {1.0 / 6, 2.0 / 6, 3.0 / 6}, 1e-14);

    Rng rng(3);
    std::vector<double> d(5 * 7);
    for (double& v : d) v = rng.uniform(-30, 30);
    const Tensor s = softmax_rows(Tensor({5, 7}, d));
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(s.at(i, j) >= 0.0);
            sum += s.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("layer_norm") {
    const Tensor ones = Tensor::full({3}, 1.0), zeros = Tensor::zeros({3});
    check_values(layer_norm(Tensor::from({1, 3}, {1, 1, 1}), ones, zeros), {0, 0, 0});
    const Tensor two = layer_norm(Tensor::from({1, 2}, {-1, 1}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
    CHECK(two[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);

    const Tensor inputs[] = {Tensor::from({1, 3}, {0.3, -1.2, 2.0}), Tensor::from({3}, {1.0, 0.5, -2.0}),
                             Tensor::from({3}, {0.1, 0.2, 0.3})};
    const Tensor w = Tensor::from({1, 3}, {0.7, -1.1, 0.4});
    const auto cmp = checks::compare_gradients(
        [&](std::span<const Tensor> in) { return sum_all(mul(layer_norm(in[0], in[1], in[2]), w)); }, inputs);
    CHECK(cmp.rel_error < 1e-5);
}

TEST_CASE("elementwise ops") {
    check_values(relu(Tensor::from({2}, {-1, 2})), {0, 2});
    check_values(scale(Tensor::from({2}, {1, 2}), 0.0), {0, 0});
    check_values(add(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2}, {10, 20})), {11, 22, 13, 24});
    check_values(concat_last(Tensor::from({2, 1}, {1, 2}), Tensor::from({2, 2}, {3, 4, 5, 6})), {1, 3, 4, 2, 5, 6});
    CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
    CHECK_THROWS_AS(mul(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
    CHECK_THROWS_AS(concat_last(Tensor::zeros({2, 2}), Tensor::zeros({3, 2})), DimensionError);

    Tape tape;
    const Tensor x = tape.leaf(Tensor::from({2, 3}, {1, -2, 3, 0.5, 0, 9}));
    tape.backward(sum_all(x));
    check_values(tape.grad(x), {1, 1, 1, 1, 1, 1});
}

TEST_CASE("relation gather and scatter") {
    const std::vector<std::size_t> labels{0, 1, 1, 0};
    check_values(relation_gather(Tensor::from({2, 2}, {1, 2, 3, 4}), labels), {1, 2, 4, 3});
    check_values(relation_scatter(Tensor::from({2, 2}, {0.25, 0.75, 0.5, 0.5}), labels, 3), {0.25, 0.75, 0, 0.5, 0.5, 0});
    CHECK_THROWS_AS(relation_gather(Tensor::zeros({2, 2}), std::vector<std::size_t>{0, 2, 0, 0}), DimensionError);
}

TEST_CASE("backward") {
    SUBCASE("d(c^2)/dc through matmul of a 1x1 with itself") {
        Tape tape;
        const Tensor x = tape.leaf(Tensor::from({1, 1}, {1.5}));
        tape.backward(sum_all(matmul(x, x)));
        CHECK(tape.grad(x).item() == 3.0);
    }
    SUBCASE("repeated use accumulates") {
        Tape tape;
        const Tensor x = tape.leaf(Tensor::from({2}, {1, 2}));
        tape.backward(sum_all(add(mul(x, x), x)));
        check_values(tape.grad(x), {3, 5});
    }
    SUBCASE("errors") {
        Tape tape, other;
        const Tensor x = tape.leaf(Tensor::from({2}, {1, 2}));
        CHECK_THROWS_AS(other.backward(sum_all(x)), UsageError);
        CHECK_THROWS_AS(tape.backward(x), DimensionError);
        CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), UsageError);
        const Tensor y = other.leaf(Tensor::from({2}, {1, 2}));
        CHECK_THROWS_AS(add(x, y), UsageError);
    }
    SUBCASE("unreachable leaf has zero gradient") {
        Tape tape;
        const Tensor x = tape.leaf(Tensor::from({2}, {1, 2}));
        const Tensor y = tape.leaf(Tensor::from({2}, {3, 4}));
        tape.backward(sum_all(x));
        CHECK(!tape.has_grad(y));
        check_values(tape.grad(y), {0, 0});
    }
    SUBCASE("constants record nothing") {
        Tape tape;
        const Tensor a = tape.leaf(Tensor::from({2}, {1, 2}));
        const std::size_t before = tape.size();
        const Tensor c = add(Tensor::from({2}, {1, 1}), Tensor::from({2}, {2, 2}));
        CHECK(!c.on_tape());
        CHECK(tape.size() == before);
        (void)a;
    }
}

TEST_CASE("determinism and replay") {
    auto run = [] {
        Rng rng(11);
        std::vector<double> d(12);
        for (double& v : d) v = rng.uniform(-2, 2);
        Tape tape;
        const Tensor a = tape.leaf(Tensor({3, 4}, d));
        const Tensor s = softmax_rows(matmul(a, transpose(a)));
        const Tensor loss = sum_all(mul(s, relu(matmul(a, transpose(a)))));
        tape.backward(loss);
        const auto replayed = tape.replay();
        CHECK(replayed.back().same_values(loss.detach()));
        return tape.grad(a).to_vector();
    };
    CHECK(run() == run());
}

TEST_CASE("separate tapes on separate threads") {
    std::vector<double> g1, g2;
    auto job = [](std::vector<double>& out) {
        Tape tape;
        const Tensor x = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
        tape.backward(sum_all(softmax_rows(matmul(x, x))));
        out = tape.grad(x).to_vector();
    };
    std::thread t1(job, std::ref(g1)), t2(job, std::ref(g2));
    t1.join();
    t2.join();
    CHECK(g1 == g2);
}

TEST_CASE("primitive gradients agree with finite differences") {
    const auto r = checks::check_primitive_gradients(100, 17);
    INFO(r.detail);
    CHECK(r.passed);
}

} // TEST_SUITE
