#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dilie/errors.hpp"
#include "dilie/metrics.hpp"
#include "dilie/data_io.hpp"
#include "dilie/pipelines.hpp"
#include "../support/fixtures.hpp"
#include "../support/synthetic.hpp"

using namespace dilie;
using testsupport::test_extractor;

namespace {

OptimizerConfig tiny_opt(int iters, double step = 0.01, std::uint64_t seed = 1) {
    OptimizerConfig o;
    o.iterations = iters;
    o.step_size = step;
    o.seed = seed;
    o.jitter_sigma = 0.0;
    o.log_every = 10;
    return o;
}

Image tiny_hazy(std::uint64_t seed, Image* clean_out = nullptr) {
    const Image clean = testsupport::synthetic_scene(48, 48, seed);
    if (clean_out) *clean_out = clean;
    return compose_haze(clean, HazeLayer::uniform_rgb({0.85, 0.85, 0.85}, 48, 48),
                        TransmissionMap::constant(48, 48, 0.6));
}

}  // namespace

TEST_CASE("adam minimizes a simple quadratic") {
    Tensor x({4}, {4.0, -3.0, 2.0, -1.0});
    Adam adam(0.1);
    for (int i = 0; i < 300; ++i) {
        Tensor g({4});
        for (int j = 0; j < 4; ++j) g[static_cast<std::size_t>(j)] = 2.0 * x[static_cast<std::size_t>(j)];
        adam.step({&x}, {&g});
    }
    for (double v : x.vec()) CHECK(std::fabs(v) < 1e-2);
}

TEST_CASE("early stop bookkeeping: snapshots track the best smoothed loss") {
    EarlyStopState es;
    es.window = 5;
    es.patience = 20;
    es.ema_alpha = 0.5;
    es.min_rel_improvement = 1e-3;

    int snapshots = 0, stop_iter = 0;
    for (int iter = 1; iter <= 200; ++iter) {
        // decreasing then flat loss curve
        const double loss = iter < 50 ? 1.0 / iter : 0.02;
        if (es.observe(iter, loss)) ++snapshots;
        if (es.should_stop(iter)) {
            stop_iter = iter;
            break;
        }
    }
    CHECK(snapshots > 0);
    CHECK(stop_iter > 0);
    CHECK(stop_iter < 200);
    CHECK(es.best_smoothed_loss <= 0.03);
    CHECK(es.best_iter <= stop_iter - es.patience);
    CHECK_THROWS_AS(
        [] {
            EarlyStopState bad;
            bad.patience = 0;
            bad.validate();
        }(),
        ArgumentError);
}

TEST_CASE("decomposition smoke run: contracts hold") {
    Image clean;
    const Image hazy = tiny_hazy(301, &clean);
    LossWeights w;
    const OptimizerConfig opt = tiny_opt(30);

    int observations = 0;
    double worst_residual = 0.0;
    const DecomposeObserver obs = [&](const DecomposeObservation& ob) {
        ++observations;
        // recompute L_ID from the observed head outputs
        double acc = 0.0;
        const std::size_t plane = 48 * 48;
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
                const double m = ob.mask[i];
                const double comp = m * ob.clean[static_cast<std::size_t>(c) * plane + i] +
                                    (1 - m) * ob.haze[static_cast<std::size_t>(c) * plane + i];
                const double r = comp - hazy.px[static_cast<std::size_t>(c) * plane + i];
                acc += r * r;
            }
        worst_residual = std::max(worst_residual,
                                  std::fabs(acc / double(3 * plane) - ob.reported_loss_id));
    };

    const DecompositionResult res =
        run_cfe_decompose(hazy, test_extractor(), default_decompose_specs(), w, opt, obs);

    CHECK(observations == 3);
    CHECK(worst_residual < 1e-6);

    // recomposition is bit-for-bit the compose of the returned heads
    const Image recompose = compose_haze(res.clean, res.haze, res.mask);
    CHECK(recompose.px.vec() == res.recomposed.px.vec());

    CHECK(res.final_losses.count("loss_id") == 1);
    CHECK(std::isfinite(res.final_losses.at("loss_id")));
    CHECK(res.stage.rows.size() == 3);
    CHECK(res.stage.iterations_run == 30);
    // uniform airlight head: all positions carry one triple
    CHECK(res.haze.uniform);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 48 * 48; ++i)
            CHECK(res.haze.values[static_cast<std::size_t>(c) * 48 * 48 + i] ==
                  res.haze.values[static_cast<std::size_t>(c) * 48 * 48]);
}

TEST_CASE("decomposition is deterministic with jitter disabled") {
    const Image hazy = tiny_hazy(302);
    LossWeights w;
    const DecompositionResult a = run_cfe_decompose(hazy, test_extractor(),
                                                    default_decompose_specs(), w, tiny_opt(12));
    const DecompositionResult b = run_cfe_decompose(hazy, test_extractor(),
                                                    default_decompose_specs(), w, tiny_opt(12));
    CHECK(a.clean.px.vec() == b.clean.px.vec());
    CHECK(a.mask.values.vec() == b.mask.values.vec());
    CHECK(a.recomposed.px.vec() == b.recomposed.px.vec());
}

TEST_CASE("decomposition rejects a bad mask head spec") {
    DecomposeSpecs specs = default_decompose_specs();
    specs.mask.output_channels = 3;
    CHECK_THROWS_AS(run_cfe_decompose(tiny_hazy(303), test_extractor(), specs, LossWeights{},
                                      tiny_opt(2)),
                    ArgumentError);
}

TEST_CASE("reconstruction on a clean input converges toward it") {
    const Image clean = testsupport::synthetic_gray(48, 48, 304);
    OptimizerConfig opt = tiny_opt(400, 0.01, 3);
    EarlyStopState stop;
    stop.window = 25;
    stop.patience = 2000;  // effectively off for this small fit check
    const ReconstructResult r =
        run_cfe_reconstruct(clean, default_reconstruct_spec(), Transform{}, opt, stop);
    CHECK(image_delta(r.out, clean, Norm::L2) <= 0.05);
    CHECK(r.stage.rows.back().total <= r.stage.rows.front().total);
}

TEST_CASE("sfe artistic with style == content stays at its fixed point") {
    const Image icfe = testsupport::synthetic_scene(48, 48, 305);
    LossWeights w;  // mu=1, kappa=1
    OptimizerConfig opt = tiny_opt(40, 0.05, 4);
    const SfeResult r = run_sfe(icfe, icfe, test_extractor(), SfeMode::artistic, w, opt);
    CHECK(image_delta(r.out, icfe, Norm::L2) <= 0.05);
}

TEST_CASE("sfe photo with mu=kappa=0 stays near init (affine null direction)") {
    const Image icfe = testsupport::synthetic_scene(48, 48, 306);
    const Image style = testsupport::synthetic_style(48, 48, 307, 0);
    LossWeights w;
    w.mu = 0.0;
    w.kappa = 0.0;
    OptimizerConfig opt = tiny_opt(150, 0.002, 5);
    const SfeResult r = run_sfe(icfe, style, test_extractor(), SfeMode::photo, w, opt);
    CHECK(image_delta(r.out, icfe, Norm::L2) <= 0.01);
}

TEST_CASE("sfe artistic pulls a gray image toward a red style") {
    const Image gray = testsupport::synthetic_gray(48, 48, 308);
    const Image red = testsupport::synthetic_style(48, 48, 309, 0);
    LossWeights w;
    w.mu = 1.0;
    w.kappa = 10.0;
    OptimizerConfig opt = tiny_opt(120, 0.02, 6);
    const SfeResult r = run_sfe(gray, red, test_extractor(), SfeMode::artistic, w, opt);

    auto red_dominance = [](const Image& img) {
        const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
        double racc = 0, gacc = 0, bacc = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            racc += img.px[i];
            gacc += img.px[plane + i];
            bacc += img.px[2 * plane + i];
        }
        return (racc - 0.5 * (gacc + bacc)) / double(plane);
    };
    CHECK(red_dominance(r.out) > red_dominance(gray));
}

TEST_CASE("sfe never mutates its content input; cfe never reads the style") {
    const Image icfe = testsupport::synthetic_scene(48, 48, 310);
    const Tensor before = icfe.px;
    const Image style = testsupport::synthetic_style(48, 48, 311, 1);
    (void)run_sfe(icfe, style, test_extractor(), SfeMode::artistic, LossWeights{},
                  tiny_opt(10, 0.05, 7));
    CHECK(icfe.px.vec() == before.vec());
    // run_cfe_* take no style argument at all: isolation holds by signature
}

TEST_CASE("run_dilie composes two stages and a manifest with four images") {
    Image clean;
    const Image hazy = tiny_hazy(312, &clean);
    const Image style = testsupport::synthetic_style(48, 48, 313, 2);

    DilieOptions o = default_dilie_options(CfeMode::decompose, SfeMode::photo);
    o.cfe_opt = tiny_opt(20);
    o.sfe_opt = tiny_opt(15, 0.05);
    const DilieResult r = run_dilie(hazy, style, test_extractor(), o);

    CHECK(r.manifest.stages.size() == 2);
    CHECK(r.manifest.images.size() == 4);  // input, cfe, haze, output
    CHECK(r.manifest.images[0].first == "input");
    CHECK(r.manifest.images[1].first == "cfe");
    CHECK(r.manifest.images[2].first == "haze");
    CHECK(r.manifest.images[3].first == "output");
    CHECK(r.manifest.aux.count("mask") == 1);
    CHECK(r.istar.px.all_finite());

    // reconstruct path: no haze layer image
    DilieOptions o2 = default_dilie_options(CfeMode::reconstruct, SfeMode::artistic);
    o2.cfe_opt = tiny_opt(15);
    o2.sfe_opt = tiny_opt(10, 0.05);
    const DilieResult r2 = run_dilie(hazy, style, test_extractor(), o2);
    CHECK(r2.manifest.stages.size() == 2);
    CHECK(r2.manifest.images.size() == 3);  // input, cfe, output
}

TEST_CASE("run_dilie manifests and outputs are reproducible") {
    const Image hazy = tiny_hazy(314);
    const Image style = testsupport::synthetic_style(48, 48, 315, 0);
    DilieOptions o = default_dilie_options(CfeMode::decompose, SfeMode::artistic);
    o.cfe_opt = tiny_opt(12);
    o.sfe_opt = tiny_opt(8, 0.05);
    const DilieResult a = run_dilie(hazy, style, test_extractor(), o);
    const DilieResult b = run_dilie(hazy, style, test_extractor(), o);
    CHECK(a.istar.px.vec() == b.istar.px.vec());

    auto strip_times = [](nlohmann::json j) {
        j.erase("created_utc");
        j.erase("wall_time_s");
        for (auto& s : j["stages"]) s.erase("wall_time_s");
        return j;
    };
    CHECK(strip_times(manifest_to_json(a.manifest)) == strip_times(manifest_to_json(b.manifest)));
}

TEST_CASE("write_run_directory produces the documented tree") {
    const Image hazy = tiny_hazy(316);
    const Image style = testsupport::synthetic_style(48, 48, 317, 1);
    DilieOptions o = default_dilie_options(CfeMode::decompose, SfeMode::photo);
    o.cfe_opt = tiny_opt(8);
    o.sfe_opt = tiny_opt(6, 0.05);
    const DilieResult r = run_dilie(hazy, style, test_extractor(), o);

    const std::string dir = testsupport::scratch_dir("run_tree");
    write_run_directory(dir, r.manifest);
    for (const char* f :
         {"manifest.json", "input.png", "cfe.png", "haze.png", "mask.png", "output.png",
          "losses.csv"})
        CHECK(std::filesystem::exists(dir + "/" + f));

    const auto j = nlohmann::json::parse(read_text(dir + "/manifest.json"));
    CHECK(j.at("stages").size() == 2);
    CHECK(j.at("images").at("output") == "output.png");
    const std::string csv = read_text(dir + "/losses.csv");
    CHECK(csv.rfind("stage,iter,total,ema", 0) == 0);
}

TEST_CASE("undersized inputs are rejected at every pipeline entry point") {
    const Image small(16, 16, 0.5);
    const Image ok = testsupport::synthetic_scene(48, 48, 318);
    CHECK_THROWS_AS(run_cfe_decompose(small, test_extractor(), default_decompose_specs(),
                                      LossWeights{}, tiny_opt(2)),
                    ArgumentError);
    CHECK_THROWS_AS(run_cfe_reconstruct(small, default_reconstruct_spec(), Transform{},
                                        tiny_opt(2), EarlyStopState{}),
                    ArgumentError);
    CHECK_THROWS_AS(
        run_sfe(small, ok, test_extractor(), SfeMode::artistic, LossWeights{}, tiny_opt(2)),
        ArgumentError);
}
