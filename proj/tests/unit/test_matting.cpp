#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/matting.hpp"
#include "dilie/rng.hpp"
#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "../support/synthetic.hpp"

using namespace dilie;

namespace {

Image full_rank_random(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Image img(h, w);
    for (double& v : img.px.vec()) v = rng.uniform(0.05, 0.95);
    return img;
}

// two-color synthetic image with a soft diagonal boundary
Image two_color(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    const double c1[3] = {rng.uniform(0.1, 0.4), rng.uniform(0.3, 0.6), rng.uniform(0.5, 0.9)};
    const double c2[3] = {rng.uniform(0.6, 0.9), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.5)};
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double a = 1.0 / (1.0 + std::exp(-(x + y - h) * 0.5));
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = (1 - a) * c1[c] + a * c2[c];
        }
    return img;
}

}  // namespace

TEST_CASE("matting laplacian rows sum to zero and kill constants") {
    const Image img = testsupport::synthetic_scene(16, 16, 80);
    const MattingLaplacian lap = matting_laplacian(img);

    const std::vector<double> ones(static_cast<std::size_t>(lap.pixel_count()), 1.0);
    const std::vector<double> row_sums = lap.multiply(ones);
    for (double v : row_sums) CHECK(std::fabs(v) < 1e-8);
    CHECK(std::fabs(lap.quad_form(ones)) < 1e-8);
}

TEST_CASE("channels affine in the source RGB lie in the null space") {
    const Image img = two_color(12, 12, 81);
    const MattingLaplacian lap = matting_laplacian(img);
    const std::size_t n = static_cast<std::size_t>(lap.pixel_count());

    // coefficient sets keeping a*R+b*G+c*B+d inside [0,1]
    const double coefs[3][4] = {
        {0.1, 0.2, 0.3, 0.2}, {0.25, -0.1, 0.15, 0.4}, {-0.2, 0.3, 0.1, 0.45}};
    for (const auto& k : coefs) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = k[0] * img.px[i] + k[1] * img.px[n + i] + k[2] * img.px[2 * n + i] + k[3];
        CHECK(std::fabs(lap.quad_form(v)) < 1e-6);
    }
}

TEST_CASE("sparse quadratic form equals the dense oracle on random images") {
    // full-rank colors keep every window well conditioned; there the direct
    // inverse-based oracle is itself trustworthy
    const Image img = full_rank_random(16, 16, 83);
    const MattingLaplacian lap = matting_laplacian(img);
    const auto dense = oracles::matting_dense(img, 1, 1e-7);

    Rng rng(84);
    std::vector<double> v(static_cast<std::size_t>(lap.pixel_count()));
    for (double& x : v) x = rng.uniform(0, 1);
    CHECK(lap.quad_form(v) ==
          doctest::Approx(oracles::quad_form_dense(dense, v)).epsilon(1e-9));
}

TEST_CASE("matting laplacian is symmetric PSD (dense eigensolve on 12x12)") {
    const Image img = testsupport::synthetic_scene(12, 12, 85);
    const MattingLaplacian lap = matting_laplacian(img);
    const int n = lap.pixel_count();

    Eigen::MatrixXd dense = Eigen::MatrixXd(lap.matrix());
    CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    REQUIRE(es.info() == Eigen::Success);
    CHECK(es.eigenvalues()(0) >= -1e-8);
    CHECK(es.eigenvalues()(n - 1) > 0.0);
}

TEST_CASE("loss_affine: constants vanish, affine recolorings vanish, dense recompute") {
    const Image img = two_color(16, 16, 86);
    const MattingLaplacian lap = matting_laplacian(img);

    CHECK(loss_affine(lap, Image(16, 16, 0.42)) == doctest::Approx(0.0).epsilon(1e-8));

    // affine recoloring of the source image
    Image recolored(16, 16);
    const std::size_t n = static_cast<std::size_t>(lap.pixel_count());
    const double coef[3][4] = {{0.4, 0.3, 0.1, 0.1}, {-0.2, 0.5, 0.2, 0.3}, {0.1, 0.1, 0.6, 0.0}};
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            double v = coef[c][3];
            for (int s = 0; s < 3; ++s) v += coef[c][s] * img.px[s * n + i];
            recolored.px[static_cast<std::size_t>(c) * n + i] = std::min(1.0, std::max(0.0, v));
        }
    CHECK(loss_affine(lap, recolored) < 1e-6);

    const Image src = full_rank_random(16, 16, 870);
    const MattingLaplacian lap2 = matting_laplacian(src);
    const Image random = testsupport::synthetic_scene(16, 16, 87);
    const auto dense = oracles::matting_dense(src, 1, 1e-7);
    double expected = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> v(random.px.data() + c * n, random.px.data() + (c + 1) * n);
        expected += oracles::quad_form_dense(dense, v);
    }
    CHECK(loss_affine(lap2, random) == doctest::Approx(expected).epsilon(1e-9));

    CHECK_THROWS_AS(loss_affine(lap, Image(8, 8, 0.5)), DimensionError);
    CHECK_THROWS_AS(matting_laplacian(Image(2, 2, 0.5)), ArgumentError);
}

TEST_CASE("loss_affine gradient matches central differences") {
    const Image img = two_color(10, 10, 88);
    const MattingLaplacian lap = matting_laplacian(img);
    auto build = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return build_loss_affine(t, lap, v[0]);
    };
    CHECK(testsupport::grad_check(build, {testsupport::synthetic_scene(10, 10, 89).px}, 0)
              .rel_err < 1e-6);
}
