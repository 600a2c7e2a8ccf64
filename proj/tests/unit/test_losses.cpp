#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/losses.hpp"
#include "dilie/matting.hpp"
#include "dilie/rng.hpp"
#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "../support/synthetic.hpp"

using namespace dilie;
using testsupport::grad_check;
using testsupport::test_extractor;

namespace {

Image random_image(int h, int w, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
    Rng rng(seed);
    Image img(h, w);
    for (double& v : img.px.vec()) v = rng.uniform(lo, hi);
    return img;
}

Tensor random_features(int n, int d, std::uint64_t seed, double lo = -1, double hi = 1) {
    Rng rng(seed);
    Tensor t({n, d});
    for (double& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("loss_id composition fixed points") {
    const Image target = random_image(12, 12, 1);
    const Image other = random_image(12, 12, 2);
    CHECK(loss_id(target, target, other, TransmissionMap::constant(12, 12, 1.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_id(target, other, target, TransmissionMap::constant(12, 12, 0.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss_id equals the scalar recomputation on random 8x8 inputs") {
    const Image target = random_image(8, 8, 3);
    const Image c = random_image(8, 8, 4), d = random_image(8, 8, 5);
    Rng rng(6);
    Tensor mt({1, 8, 8});
    for (double& v : mt.vec()) v = rng.uniform();
    const TransmissionMap m(mt);

    double acc = 0.0;
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                const double mv = m.values.at(0, y, x);
                const double comp = mv * c.at(ch, y, x) + (1 - mv) * d.at(ch, y, x);
                const double r = comp - target.at(ch, y, x);
                acc += r * r;
            }
    CHECK(loss_id(target, c, d, m) == doctest::Approx(acc / (3 * 64)).epsilon(1e-12));

    CHECK_THROWS_AS(loss_id(target, random_image(8, 6, 6), d, m), DimensionError);
}

TEST_CASE("loss_id gradients wrt all three head outputs") {
    const Image target = random_image(8, 8, 7);
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return build_loss_id(t, t.leaf(target.px), v[0], v[1], v[2]);
    };
    std::vector<Tensor> inputs = {random_image(8, 8, 8).px, random_image(8, 8, 9).px,
                                  Tensor({1, 8, 8}, 0.4)};
    for (std::size_t which = 0; which < 3; ++which)
        CHECK(grad_check(build, inputs, which).rel_err < 1e-7);
}

TEST_CASE("cx_similarity: brute-force match, self-similarity, range, permutation") {
    const double h = 0.5, eps = 1e-5;
    // well-separated random 6-vector set
    Tensor f = random_features(6, 5, 10);
    for (int i = 0; i < 6; ++i) f.at(i, i % 5) += 3.0 * (i + 1);

    const double self = cx_similarity(f, f, h, eps);
    CHECK(self >= 0.95);
    CHECK(self == doctest::Approx(oracles::cx_brute(f, f, h, eps)).epsilon(1e-9));

    const Tensor g = random_features(7, 5, 11);
    const double cx = cx_similarity(f, g, h, eps);
    CHECK(cx > 0.0);
    CHECK(cx <= 1.0);
    CHECK(cx == doctest::Approx(oracles::cx_brute(f, g, h, eps)).epsilon(1e-9));

    // permuting the second set's rows leaves CX unchanged
    Tensor gp({7, 5});
    const int perm[7] = {3, 0, 6, 1, 5, 2, 4};
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 5; ++j) gp.at(i, j) = g.at(perm[i], j);
    CHECK(cx_similarity(f, gp, h, eps) == doctest::Approx(cx).epsilon(1e-9));

    CHECK_THROWS_AS(cx_similarity(Tensor({0, 5}), g, h, eps), ArgumentError);
}

TEST_CASE("cx affinity rows are stochastic (via the brute-force identity)") {
    // row-stochasticity is what makes each row's max <= 1; verify CX over
    // many random instances stays in (0,1] and matches the oracle
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        const Tensor f = random_features(9, 4, seed);
        const Tensor g = random_features(8, 4, seed + 100);
        const double cx = cx_similarity(f, g, 0.5, 1e-5);
        CHECK(cx > 0.0);
        CHECK(cx <= 1.0 + 1e-12);
        CHECK(cx == doctest::Approx(oracles::cx_brute(f, g, 0.5, 1e-5)).epsilon(1e-9));
    }
}

TEST_CASE("loss_cl: self-similarity near zero, noise strictly worse") {
    const FeatureExtractor& ext = test_extractor();
    const Image img = testsupport::synthetic_scene(64, 64, 30);
    LossWeights w;

    const double self = loss_cl(img, img, ext, w);
    CHECK(self >= 0.0);
    CHECK(self <= 0.05);

    const Image noise = random_image(64, 64, 31, 0.0, 1.0);
    CHECK(loss_cl(img, noise, ext, w) > self);
}

TEST_CASE("loss_cl gradient wrt the generated image (through the extractor)") {
    const FeatureExtractor& ext = test_extractor();
    const Image target = testsupport::synthetic_scene(32, 32, 32);
    const Image probe = testsupport::synthetic_scene(32, 32, 33);
    LossWeights w;
    FeatureStack tf = extract(ext, target, content_taps());
    std::vector<Tensor> feats;
    for (auto& [n, m] : tf.maps) feats.push_back(feature_matrix(m));

    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return build_loss_cl(t, ext, v[0], feats, content_taps(), w);
    };
    CHECK(grad_check(build, {probe.px}, 0, 24).rel_err < 1e-2);
}

TEST_CASE("loss_ir: fixed point, identity matches image_delta^2, recomputation") {
    const Image target = random_image(8, 8, 40);
    const Transform identity;
    CHECK(loss_ir(target, target, identity) == doctest::Approx(0.0));

    const Image out = random_image(8, 8, 41);
    const double delta = image_delta(out, target, Norm::L2);
    CHECK(loss_ir(target, out, identity) == doctest::Approx(delta * delta).epsilon(1e-10));

    double acc = 0.0;
    for (std::size_t i = 0; i < out.px.numel(); ++i) {
        const double d = out.px[i] - target.px[i];
        acc += d * d;
    }
    CHECK(loss_ir(target, out, identity) ==
          doctest::Approx(acc / double(out.px.numel())).epsilon(1e-12));

    Transform down{Transform::Kind::downsample, 2};
    CHECK_THROWS_AS(loss_ir(target, out, down), DimensionError);
    CHECK(loss_ir(target, Image(4, 4, 0.5), down) >= 0.0);
}

TEST_CASE("gram matrix: zero input, symmetry, hand-expanded toy") {
    CHECK(gram_matrix(Tensor({3, 4, 4}, 0.0)).max_value() == 0.0);

    Rng rng(50);
    Tensor f({4, 3, 5});
    for (double& v : f.vec()) v = rng.uniform(-1, 1);
    const Tensor g = gram_matrix(f);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) CHECK(g.at(a, b) == doctest::Approx(g.at(b, a)));

    // 2-channel, 2-pixel toy expanded by hand
    Tensor toy({2, 1, 2}, {1.0, 2.0, 3.0, -1.0});
    const Tensor tg = gram_matrix(toy);
    const double norm = 1.0 / (2.0 * 1.0 * 2.0);
    CHECK(tg.at(0, 0) == doctest::Approx((1 * 1 + 2 * 2) * norm));
    CHECK(tg.at(0, 1) == doctest::Approx((1 * 3 + 2 * -1) * norm));
    CHECK(tg.at(1, 0) == doctest::Approx((3 * 1 + -1 * 2) * norm));
    CHECK(tg.at(1, 1) == doctest::Approx((3 * 3 + 1) * norm));

    const Tensor gb2 = oracles::gram_brute(f);
    for (std::size_t i = 0; i < g.numel(); ++i)
        CHECK(g[i] == doctest::Approx(gb2[i]).epsilon(1e-12));
}

TEST_CASE("loss_content / loss_style: zero at equality, recomputation on 32x32") {
    const FeatureExtractor& ext = test_extractor();
    const Image x = testsupport::synthetic_scene(32, 32, 51);
    CHECK(loss_content(x, x, ext) == doctest::Approx(0.0));
    CHECK(loss_style(x, x, ext) == doctest::Approx(0.0));

    const Image y = testsupport::synthetic_scene(32, 32, 52);

    // independent recomputation from extracted maps
    {
        const auto taps = content_taps();
        FeatureStack fx = extract(ext, x, taps), fy = extract(ext, y, taps);
        double acc = 0.0;
        for (std::size_t t = 0; t < taps.size(); ++t) {
            const Tensor& a = fx.maps[t].second;
            const Tensor& b = fy.maps[t].second;
            double mse = 0.0;
            for (std::size_t i = 0; i < a.numel(); ++i) {
                const double d = a[i] - b[i];
                mse += d * d;
            }
            acc += mse / double(a.numel());
        }
        CHECK(loss_content(x, y, ext) ==
              doctest::Approx(acc / double(taps.size())).epsilon(1e-10));
    }
    {
        const auto taps = style_taps();
        FeatureStack fs = extract(ext, x, taps), fy = extract(ext, y, taps);
        double acc = 0.0;
        for (std::size_t t = 0; t < taps.size(); ++t) {
            const Tensor ga = oracles::gram_brute(fs.maps[t].second);
            const Tensor gb = oracles::gram_brute(fy.maps[t].second);
            double mse = 0.0;
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                const double d = ga[i] - gb[i];
                mse += d * d;
            }
            acc += mse / double(ga.numel());
        }
        CHECK(loss_style(x, y, ext) ==
              doctest::Approx(acc / double(taps.size())).epsilon(1e-10));
    }
}

TEST_CASE("gram-based style loss ignores spatial arrangement") {
    // shuffling a map's spatial positions leaves its Gram matrix unchanged
    Rng rng(53);
    Tensor map({6, 4, 4});
    for (double& v : map.vec()) v = rng.uniform(-1, 1);
    Tensor shuffled = map;
    std::vector<int> perm(16);
    for (int i = 0; i < 16; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = 15; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    for (int c = 0; c < 6; ++c)
        for (int p = 0; p < 16; ++p)
            shuffled.vec()[static_cast<std::size_t>(c) * 16 + p] =
                map.vec()[static_cast<std::size_t>(c) * 16 + perm[static_cast<std::size_t>(p)]];
    const Tensor ga = gram_matrix(map), gb = gram_matrix(shuffled);
    for (std::size_t i = 0; i < ga.numel(); ++i)
        CHECK(ga[i] == doctest::Approx(gb[i]).epsilon(1e-12));
}

TEST_CASE("remd: self-zero, symmetry, exhaustive toy oracle, zero-norm error") {
    const Tensor f = random_features(5, 4, 60);
    CHECK(remd_loss(f, f) == doctest::Approx(0.0).epsilon(1e-12));

    const Tensor g = random_features(7, 4, 61);
    CHECK(remd_loss(f, g) == doctest::Approx(remd_loss(g, f)).epsilon(1e-12));

    const Tensor a = random_features(3, 2, 62), b = random_features(2, 2, 63);
    CHECK(remd_loss(a, b) == doctest::Approx(oracles::remd_brute(a, b)).epsilon(1e-12));
    CHECK(remd_loss(f, g) == doctest::Approx(oracles::remd_brute(f, g)).epsilon(1e-12));

    Tensor z = random_features(3, 4, 64);
    for (int j = 0; j < 4; ++j) z.at(1, j) = 0.0;
    CHECK_THROWS_AS(remd_loss(z, g), ArgumentError);
}

TEST_CASE("remd gradient away from min-switch ties") {
    const Tensor g = random_features(6, 4, 65);
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return build_remd(t, v[0], g);
    };
    CHECK(grad_check(build, {random_features(5, 4, 66)}, 0).rel_err < 1e-6);
}

TEST_CASE("loss_pe and loss_ae compose exactly from their parts") {
    const FeatureExtractor& ext = test_extractor();
    const Image icfe = testsupport::synthetic_scene(24, 24, 70);
    const Image style = testsupport::synthetic_style(24, 24, 71, 0);
    const Image istar = testsupport::synthetic_scene(24, 24, 72);
    const MattingLaplacian lap = matting_laplacian(icfe);

    LossWeights w;
    w.mu = 0.7;
    w.kappa = 2.5;

    // weighted-sum recomposition from separately evaluated components
    const double lm = loss_affine(lap, istar);
    const double lc = loss_content(icfe, istar, ext);
    const double ls = loss_style(style, istar, ext);
    const double pe = loss_pe(lap, icfe, style, istar, ext, w);
    CHECK(pe == doctest::Approx(lm + w.mu * lc + w.kappa * ls).epsilon(1e-12));

    // mu = kappa = 0 reduces L_PE to the affine term alone
    LossWeights zero = w;
    zero.mu = 0.0;
    zero.kappa = 0.0;
    CHECK(loss_pe(lap, icfe, style, istar, ext, zero) == doctest::Approx(lm).epsilon(1e-12));

    // L_AE vanishes when Istar = Icfe = S
    CHECK(loss_ae(icfe, icfe, icfe, ext, w, 5) == doctest::Approx(0.0).epsilon(1e-10));
}
