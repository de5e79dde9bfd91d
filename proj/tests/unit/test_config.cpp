#include <doctest.h>

#include <string>

#include "dtfixup/config.hpp"
#include "dtfixup/rng.hpp"

using namespace dtfixup;

namespace {

std::vector<std::string> parse_errors(std::string_view text) {
    try {
        parse_config(text);
    } catch (const ConfigParseError& e) {
        return e.errors();
    }
    return {};
}

bool mentions(const std::vector<std::string>& errors, std::string_view needle) {
    for (const auto& e : errors)
        if (e.find(needle) != std::string::npos) return true;
    return false;
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("minimal config") {
    const auto c = parse_config("schemes = [dtfixup]\ndepths = [2, 4]\nmu_targets = [10]\n");
    CHECK(c.schemes == std::vector{SchemeKind::DTFixup});
    CHECK(c.depths == std::vector<std::size_t>{2, 4});
    CHECK(c.mu_targets == std::vector{10.0});
    CHECK(c.d_x == ExperimentConfig{}.d_x);
}

TEST_CASE("empty text yields the defaults") { CHECK(parse_config("# nothing\n\n") == ExperimentConfig{}); }

TEST_CASE("every field is read") {
    const auto c = parse_config(R"(
schemes = [standard_ln, xavier, tfixup, dtfixup]
depths = [1, 3]
mu_targets = [5, 20.5]
seq_len = 6
d_x = 32
d_z = 8
n_heads = 2
mlp_hidden = 64
relational = true
n_relations = 3
share_relations = false
seeds = [1, 2, 3]
probe_eta = 1e-5
band = 2
threads = 3
train.size = 100
train.eval_size = 10
train.outputs = 2
train.steps = 50
train.batch_size = 4
train.lr = 0.5
train.decay_steps = 20
train.warmup_steps = 5
train.optimizer = adam
train.mu = 7
train.eval_every = 5
train.smoothing = 3
)");
    CHECK(c.schemes.size() == 4);
    CHECK(c.relational);
    CHECK(!c.share_relations);
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.probe_eta == 1e-5);
    CHECK(c.training.optimizer == Optimizer::Adam);
    CHECK(c.training.smoothing == 3);
    CHECK(c.training.learning_rate == 0.5);
    CHECK(config_keys().size() == 27);
}

TEST_CASE("invalid values name the key") {
    const auto errs = parse_errors("depths = [0]\n");
    REQUIRE(!errs.empty());
    CHECK(mentions(errs, "depths"));
}

TEST_CASE("unknown keys are rejected") {
    const auto errs = parse_errors("d_x = 8\nlearning_rate = 0.1\n");
    REQUIRE(errs.size() == 1);
    CHECK(mentions(errs, "learning_rate"));
    CHECK(mentions(errs, "line 2"));
}

TEST_CASE("all errors are reported at once") {
    const auto errs = parse_errors("d_x = eight\nbogus = 1\nschemes = [fixup]\nd_x = 4\nno equals sign\n");
    CHECK(errs.size() >= 5);
    CHECK(mentions(errs, "line 1"));
    CHECK(mentions(errs, "bogus"));
    CHECK(mentions(errs, "fixup"));
    CHECK(mentions(errs, "line 4"));
    CHECK(mentions(errs, "line 5"));
}

TEST_CASE("cross-field validation") {
    CHECK(mentions(parse_errors("relational = true\nn_relations = 0\n"), "n_relations"));
    CHECK(mentions(parse_errors("probe_eta = 1\n"), "probe_eta"));
    CHECK(mentions(parse_errors("seeds = []\n"), "seeds"));
    CHECK(mentions(parse_errors("band = 0.5\n"), "band"));
}

TEST_CASE("serialize round-trips") {
    ExperimentConfig c;
    c.schemes = {SchemeKind::Xavier, SchemeKind::DTFixup};
    c.depths = {2, 16};
    c.mu_targets = {0.1, 1.0 / 3.0};
    c.relational = true;
    c.n_relations = 4;
    c.seeds = {0, 18446744073709551615ULL};
    c.training.optimizer = Optimizer::Adam;
    c.training.learning_rate = 3e-4;
    CHECK(parse_config(serialize_config(c)) == c);
    CHECK(serialize_config(parse_config(serialize_config(c))) == serialize_config(c));
}

TEST_CASE("hash ignores order and comments, tracks values") {
    const auto a = parse_config("d_x = 32\nd_z = 8\n");
    const auto b = parse_config("# comment\nd_z = 8   # trailing\n\nd_x = 32\n");
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash_hex(a).size() == 16);
    CHECK(config_hash(a) != config_hash(parse_config("d_x = 32\nd_z = 4\n")));
}

TEST_CASE("malformed input never crashes the parser") {
    Rng rng(5);
    const std::string alphabet = "abcdxz_.=[],#0123456789 -+e\n\ttrue";
    const std::string base = serialize_config(ExperimentConfig{});
    for (int t = 0; t < 500; ++t) {
        std::string s = base;
        const int edits = 1 + static_cast<int>(rng.below(8));
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = rng.below(s.size());
            switch (rng.below(3)) {
            case 0: s[pos] = alphabet[rng.below(alphabet.size())]; break;
            case 1: s.erase(pos, 1 + rng.below(4)); break;
            default: s.insert(pos, 1, alphabet[rng.below(alphabet.size())]);
            }
            if (s.empty()) s = "x";
        }
        try {
            parse_config(s);
        } catch (const ConfigError&) {
        }
    }
    CHECK(true);
}

TEST_CASE("load_config reports a missing file") {
    CHECK_THROWS_AS(load_config("/nonexistent/dtfixup.cfg"), ConfigError);
}

TEST_CASE("manifest") {
    ExperimentConfig c;
    c.depths = {2, 4};
    c.seeds = {0, 1};
    const auto m = make_manifest(c, "sweep");
    CHECK(m.config_hash == config_hash_hex(c));
    CHECK(m.run_seeds.size() == 4);
    const std::string text = m.to_text();
    CHECK(text.find("config_hash = " + m.config_hash) != std::string::npos);
    CHECK(text.find("tool_version = ") != std::string::npos);
}

} // TEST_SUITE
