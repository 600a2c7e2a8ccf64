#include <doctest.h>

#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/generators.hpp"
#include "dilie/rng.hpp"
#include "../support/oracles.hpp"

using namespace dilie;

TEST_CASE("build_generator is deterministic per (spec, seed)") {
    GeneratorSpec spec;
    const Generator a = build_generator(spec, 1);
    const Generator b = build_generator(spec, 1);
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i)
        CHECK(a.params[i].vec() == b.params[i].vec());
    const Generator c = build_generator(spec, 2);
    CHECK(a.params[0].vec() != c.params[0].vec());
}

TEST_CASE("parameter count matches the architecture-arithmetic oracle") {
    GeneratorSpec spec;  // default 5-level
    const Generator g = build_generator(spec, 1);
    CHECK(g.parameter_count() == oracles::generator_param_count(spec));
    // frozen literal for the default spec, computed from the closed form
    CHECK(g.parameter_count() == 1040099u);

    GeneratorSpec mask = spec;
    mask.output_channels = 1;
    CHECK(build_generator(mask, 1).parameter_count() ==
          oracles::generator_param_count(mask));

    GeneratorSpec shallow;
    shallow.depth = 3;
    shallow.channels = {8, 16, 24};
    shallow.skip_connections = false;
    CHECK(build_generator(shallow, 3).parameter_count() ==
          oracles::generator_param_count(shallow));
}

TEST_CASE("skip toggle shifts the count by the documented amount") {
    GeneratorSpec on;  // defaults have skips on
    GeneratorSpec off = on;
    off.skip_connections = false;
    const std::size_t n_on = build_generator(on, 5).parameter_count();
    const std::size_t n_off = build_generator(off, 5).parameter_count();
    CHECK(n_on == oracles::generator_param_count(on));
    CHECK(n_off == oracles::generator_param_count(off));
    CHECK(n_on - n_off ==
          oracles::generator_param_count(on) - oracles::generator_param_count(off));
    CHECK(n_on > n_off);
}

TEST_CASE("invalid specs are rejected") {
    GeneratorSpec bad;
    bad.channels = {16, 32};  // length != depth
    CHECK_THROWS_AS(build_generator(bad, 1), ArgumentError);
    GeneratorSpec bad2;
    bad2.depth = 1;
    bad2.channels = {16};
    CHECK_THROWS_AS(build_generator(bad2, 1), ArgumentError);
    GeneratorSpec bad3;
    bad3.output_channels = 2;
    CHECK_THROWS_AS(build_generator(bad3, 1), ArgumentError);
}

TEST_CASE("sample_noise_input: range, determinism, seed sensitivity") {
    const NoiseSeedInput z = sample_noise_input(256, 256, 32, 3);
    CHECK(z.values.min_value() >= 0.0);
    CHECK(z.values.max_value() <= 0.1);

    const NoiseSeedInput z2 = sample_noise_input(256, 256, 32, 3);
    CHECK(z.values.vec() == z2.values.vec());

    const NoiseSeedInput z3 = sample_noise_input(256, 256, 32, 4);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < z.values.numel(); ++i)
        if (z.values[i] != z3.values[i]) ++differing;
    CHECK(double(differing) / double(z.values.numel()) > 0.99);

    CHECK_THROWS_AS(sample_noise_input(16, 256, 32, 1), ArgumentError);
}

TEST_CASE("noise jitter is seeded and reproducible") {
    NoiseSeedInput z = sample_noise_input(32, 32, 4, 9, 1.0 / 30.0);
    const Tensor a = z.at_iteration(5);
    const Tensor b = z.at_iteration(5);
    CHECK(a.vec() == b.vec());
    CHECK(a.vec() != z.at_iteration(6).vec());
    z.jitter_sigma = 0.0;
    CHECK(z.at_iteration(5).vec() == z.values.vec());
}

TEST_CASE("forward: output size equals input size, values strictly inside (0,1)") {
    GeneratorSpec spec;
    spec.channels = {8, 8, 12, 12, 16};
    const Generator g = build_generator(spec, 7);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{48, 80}, std::pair{50, 38}}) {
        const NoiseSeedInput z = sample_noise_input(h, w, spec.input_channels, 11);
        const Tensor out = forward(g, z);
        CHECK(out.channels() == 3);
        CHECK(out.height() == h);
        CHECK(out.width() == w);
        CHECK(out.min_value() > 0.0);
        CHECK(out.max_value() < 1.0);
    }
}

TEST_CASE("forward is deterministic") {
    GeneratorSpec spec;
    spec.depth = 3;
    spec.channels = {8, 12, 16};
    const Generator g = build_generator(spec, 8);
    const NoiseSeedInput z = sample_noise_input(40, 40, spec.input_channels, 12);
    CHECK(forward(g, z).vec() == forward(g, z).vec());
}

TEST_CASE("channel mismatch between z and spec raises a dimension error") {
    const Generator g = build_generator(GeneratorSpec{}, 1);
    const NoiseSeedInput z = sample_noise_input(64, 64, 16, 1);  // spec wants 32
    CHECK_THROWS_AS(forward(g, z), DimensionError);
}

TEST_CASE("parameter gradient matches central differences on a random subset") {
    GeneratorSpec spec;
    spec.depth = 2;
    spec.channels = {6, 8};
    spec.input_channels = 4;
    Generator g = build_generator(spec, 21);
    const NoiseSeedInput z = sample_noise_input(32, 32, 4, 22);

    auto eval_mean = [&](const Generator& gen) {
        ad::Tape t;
        return t.value(t.mean(generator_on_tape(t, gen, z.values, nullptr, false)))[0];
    };

    ad::Tape tape;
    std::vector<ad::Var> pv;
    ad::Var out = generator_on_tape(tape, g, z.values, &pv);
    tape.backward(tape.mean(out));

    Rng pick(77);
    double num2 = 0.0, diff2 = 0.0;
    for (int k = 0; k < 10; ++k) {
        const std::size_t pi = pick.below(g.params.size());
        if (g.params[pi].numel() == 0) continue;
        const std::size_t ei = pick.below(g.params[pi].numel());
        const double h = 1e-5 * (1.0 + std::fabs(g.params[pi][ei]));
        Generator gp = g;
        gp.params[pi][ei] += h;
        Generator gm = g;
        gm.params[pi][ei] -= h;
        const double numeric = (eval_mean(gp) - eval_mean(gm)) / (2.0 * h);
        const double analytic = tape.grad_ref(pv[pi])[ei];
        num2 += numeric * numeric;
        diff2 += (analytic - numeric) * (analytic - numeric);
    }
    CHECK(std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12) < 1e-3);
}

TEST_CASE("untrained generator output is smoother than its noise input") {
    GeneratorSpec spec;  // defaults
    const Generator g = build_generator(spec, 31);
    const NoiseSeedInput z = sample_noise_input(64, 64, spec.input_channels, 32);
    const Tensor out = forward(g, z);

    Tensor z3({3, 64, 64});
    for (std::size_t i = 0; i < z3.numel(); ++i) z3[i] = z.values[i];
    CHECK(oracles::mean_abs_laplacian(out) < oracles::mean_abs_laplacian(z3));
}
