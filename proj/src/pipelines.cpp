#include "dilie/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

#include "dilie/data_io.hpp"
#include "dilie/errors.hpp"
#include "dilie/matting.hpp"
#include "dilie/metrics.hpp"
#include "dilie/rng.hpp"

namespace dilie {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_pipeline_size(const Image& img, const char* who) {
    if (img.height() < 32 || img.width() < 32)
        throw ArgumentError(std::string(who) + ": images entering pipelines must be >= 32x32");
}

struct EmaTracker {
    double alpha = 0.99;
    double value = std::numeric_limits<double>::quiet_NaN();
    void observe(double loss) {
        value = std::isnan(value) ? loss : alpha * value + (1.0 - alpha) * loss;
    }
};

// Classic airlight estimate: per-channel mean of the brightest percentile
// (by luma), squashed back through a logit so the head starts near it.
Tensor airlight_logits_from(const Image& img) {
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<std::size_t> order(plane);
    for (std::size_t i = 0; i < plane; ++i) order[i] = i;
    const double* r = img.px.data();
    const double* g = r + plane;
    const double* b = g + plane;
    auto luma = [&](std::size_t i) { return 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]; };
    const std::size_t keep = std::max<std::size_t>(1, plane / 100);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(keep), order.end(),
                      [&](std::size_t a, std::size_t c) { return luma(a) > luma(c); });
    Tensor logits({3});
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < keep; ++k)
            acc += img.px[static_cast<std::size_t>(c) * plane + order[k]];
        double v = std::min(0.95, std::max(0.05, acc / double(keep)));
        logits[static_cast<std::size_t>(c)] = std::log(v / (1.0 - v));
    }
    return logits;
}

void check_finite_or_throw(double v, int iter, int last_finite, const char* stage) {
    if (!std::isfinite(v))
        throw RunError(std::string(stage) + ": loss became non-finite at iteration " +
                           std::to_string(iter),
                       last_finite);
}

std::vector<std::string> union_taps() {
    std::vector<std::string> taps = style_taps();
    for (const auto& t : content_taps()) taps.push_back(t);
    return taps;
}

}  // namespace

const char* to_string(CfeMode m) {
    return m == CfeMode::decompose ? "decompose" : "reconstruct";
}
const char* to_string(SfeMode m) { return m == SfeMode::photo ? "photo" : "artistic"; }

CfeMode cfe_mode_from_string(const std::string& s) {
    if (s == "decompose") return CfeMode::decompose;
    if (s == "reconstruct") return CfeMode::reconstruct;
    throw ArgumentError("alpha must be 'decompose' or 'reconstruct', got '" + s + "'");
}

SfeMode sfe_mode_from_string(const std::string& s) {
    if (s == "photo") return SfeMode::photo;
    if (s == "artistic") return SfeMode::artistic;
    throw ArgumentError("beta must be 'photo' or 'artistic', got '" + s + "'");
}

DecomposeSpecs default_decompose_specs() {
    DecomposeSpecs s;
    s.clean.skip_connections = true;
    s.clean.output_channels = 3;
    s.haze.skip_connections = true;
    s.haze.output_channels = 3;
    s.mask.skip_connections = true;
    s.mask.output_channels = 1;
    s.uniform_airlight = true;
    return s;
}

GeneratorSpec default_reconstruct_spec() {
    GeneratorSpec s;
    s.skip_connections = false;
    s.output_channels = 3;
    return s;
}

DilieOptions default_dilie_options(CfeMode alpha, SfeMode beta) {
    DilieOptions o;
    o.alpha = alpha;
    o.beta = beta;
    o.cfe_opt.step_size = 0.01;
    o.cfe_opt.iterations = alpha == CfeMode::decompose ? 4000 : 3000;
    o.sfe_opt.step_size = 0.05;
    o.sfe_opt.iterations = 1000;
    o.sfe_opt.jitter_sigma = 0.0;  // pixel-space stage has no noise input
    if (beta == SfeMode::photo) o.weights.kappa = 1e3;
    return o;
}

DecompositionResult run_cfe_decompose(const Image& input, const FeatureExtractor& ext,
                                      const DecomposeSpecs& specs, const LossWeights& w,
                                      const OptimizerConfig& opt,
                                      const DecomposeObserver& observer) {
    const auto t0 = Clock::now();
    opt.validate();
    w.validate();
    require_pipeline_size(input, "run_cfe_decompose");
    if (specs.mask.output_channels != 1)
        throw ArgumentError("run_cfe_decompose: mask head must have 1 output channel");
    if (specs.clean.output_channels != 3 || specs.haze.output_channels != 3)
        throw ArgumentError("run_cfe_decompose: clean/haze heads must have 3 output channels");

    const int h = input.height(), wd = input.width();
    const bool use_cl = w.lambda_cl > 0.0;
    const auto taps = content_taps();

    std::vector<Tensor> target_feats;
    if (use_cl) {
        FeatureStack tf = extract(ext, input, taps);
        for (const auto& [n, m] : tf.maps) target_feats.push_back(feature_matrix(m));
    }

    Generator gen_c = build_generator(specs.clean, derive_seed(opt.seed, 11));
    Generator gen_m = build_generator(specs.mask, derive_seed(opt.seed, 13));
    Generator gen_h;
    Tensor airlight_logits;
    if (specs.uniform_airlight)
        airlight_logits = airlight_logits_from(input);
    else
        gen_h = build_generator(specs.haze, derive_seed(opt.seed, 12));

    NoiseSeedInput z_c = sample_noise_input(h, wd, specs.clean.input_channels,
                                            derive_seed(opt.seed, 101), opt.jitter_sigma);
    NoiseSeedInput z_m = sample_noise_input(h, wd, specs.mask.input_channels,
                                            derive_seed(opt.seed, 103), opt.jitter_sigma);
    NoiseSeedInput z_h;
    if (!specs.uniform_airlight)
        z_h = sample_noise_input(h, wd, specs.haze.input_channels,
                                 derive_seed(opt.seed, 102), opt.jitter_sigma);

    Adam adam(opt.step_size);
    StageRecord stage;
    stage.name = "cfe_decompose";
    stage.seed = opt.seed;
    EmaTracker ema;
    int last_finite = 0;

    for (int iter = 1; iter <= opt.iterations; ++iter) {
        ad::Tape tape;
        std::vector<ad::Var> pv_c, pv_m, pv_h;
        ad::Var out_c = generator_on_tape(tape, gen_c, z_c.at_iteration(iter), &pv_c);
        ad::Var out_m = generator_on_tape(tape, gen_m, z_m.at_iteration(iter), &pv_m);
        ad::Var out_h, air_var;
        if (specs.uniform_airlight) {
            air_var = tape.leaf(airlight_logits, true);
            out_h = tape.broadcast_chw(tape.sigmoid(air_var), h, wd);
        } else {
            out_h = generator_on_tape(tape, gen_h, z_h.at_iteration(iter), &pv_h);
        }
        ad::Var target = tape.leaf(input.px);
        ad::Var l_id = build_loss_id(tape, target, out_c, out_h, out_m);
        ad::Var total = l_id;
        ad::Var l_cl{};
        if (use_cl) {
            l_cl = build_loss_cl(tape, ext, out_c, target_feats, taps, w);
            total = tape.add(l_id, tape.affine(l_cl, w.lambda_cl));
        }
        const double tv = tape.value(total)[0];
        check_finite_or_throw(tv, iter, last_finite, "cfe_decompose");
        last_finite = iter;
        ema.observe(tv);

        tape.backward(total);
        std::vector<Tensor*> ps;
        std::vector<const Tensor*> gs;
        for (std::size_t i = 0; i < pv_c.size(); ++i) {
            ps.push_back(&gen_c.params[i]);
            gs.push_back(&tape.grad_ref(pv_c[i]));
        }
        for (std::size_t i = 0; i < pv_m.size(); ++i) {
            ps.push_back(&gen_m.params[i]);
            gs.push_back(&tape.grad_ref(pv_m[i]));
        }
        if (specs.uniform_airlight) {
            ps.push_back(&airlight_logits);
            gs.push_back(&tape.grad_ref(air_var));
        } else {
            for (std::size_t i = 0; i < pv_h.size(); ++i) {
                ps.push_back(&gen_h.params[i]);
                gs.push_back(&tape.grad_ref(pv_h[i]));
            }
        }
        adam.step(ps, gs);

        if (iter % opt.log_every == 0 || iter == opt.iterations) {
            LossRow row;
            row.iter = iter;
            row.total = tv;
            row.ema = ema.value;
            row.components["loss_id"] = tape.value(l_id)[0];
            if (use_cl) row.components["loss_cl"] = tape.value(l_cl)[0];
            stage.rows.push_back(row);
            if (observer) {
                DecomposeObservation obs{iter, tape.value(out_c), tape.value(out_h),
                                         tape.value(out_m), tape.value(l_id)[0], tv};
                observer(obs);
            }
        }
        stage.iterations_run = iter;
    }

    DecompositionResult res;
    res.clean = Image(forward(gen_c, z_c));
    res.mask = TransmissionMap(forward(gen_m, z_m));
    if (specs.uniform_airlight) {
        std::array<double, 3> rgb{};
        for (int c = 0; c < 3; ++c)
            rgb[static_cast<std::size_t>(c)] =
                1.0 / (1.0 + std::exp(-airlight_logits[static_cast<std::size_t>(c)]));
        res.haze = HazeLayer::uniform_rgb(rgb, h, wd);
    } else {
        res.haze = HazeLayer(forward(gen_h, z_h));
    }
    res.recomposed = compose_haze(res.clean, res.haze, res.mask);

    res.final_losses["loss_id"] =
        loss_id(input, res.clean, Image(res.haze.values), res.mask);
    if (use_cl) {
        res.final_losses["loss_cl"] = loss_cl(input, res.clean, ext, w, taps);
        res.final_losses["total"] =
            res.final_losses["loss_id"] + w.lambda_cl * res.final_losses["loss_cl"];
    } else {
        res.final_losses["total"] = res.final_losses["loss_id"];
    }
    stage.final_losses = res.final_losses;
    stage.wall_time_s = seconds_since(t0);
    res.stage = std::move(stage);
    return res;
}

ReconstructResult run_cfe_reconstruct(const Image& input, const GeneratorSpec& spec,
                                      const Transform& transform,
                                      const OptimizerConfig& opt, EarlyStopState stop) {
    const auto t0 = Clock::now();
    opt.validate();
    stop.validate();
    require_pipeline_size(input, "run_cfe_reconstruct");

    const Image target = transform.apply(input);
    Generator gen = build_generator(spec, derive_seed(opt.seed, 21));
    NoiseSeedInput z = sample_noise_input(target.height(), target.width(),
                                          spec.input_channels, derive_seed(opt.seed, 202),
                                          opt.jitter_sigma);
    Adam adam(opt.step_size);
    StageRecord stage;
    stage.name = "cfe_reconstruct";
    stage.seed = opt.seed;
    int last_finite = 0;
    Image best;
    bool have_best = false;

    for (int iter = 1; iter <= opt.iterations; ++iter) {
        ad::Tape tape;
        std::vector<ad::Var> pv;
        ad::Var out = generator_on_tape(tape, gen, z.at_iteration(iter), &pv);
        ad::Var l = build_loss_ir(tape, out, tape.leaf(target.px));
        const double lv = tape.value(l)[0];
        check_finite_or_throw(lv, iter, last_finite, "cfe_reconstruct");
        last_finite = iter;

        tape.backward(l);
        std::vector<Tensor*> ps;
        std::vector<const Tensor*> gs;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            ps.push_back(&gen.params[i]);
            gs.push_back(&tape.grad_ref(pv[i]));
        }
        adam.step(ps, gs);

        if (stop.observe(iter, lv)) {
            best = Image(forward(gen, z));
            have_best = true;
        }
        if (iter % opt.log_every == 0 || iter == opt.iterations) {
            LossRow row;
            row.iter = iter;
            row.total = lv;
            row.ema = stop.ema;
            row.components["loss_ir"] = lv;
            stage.rows.push_back(row);
        }
        stage.iterations_run = iter;
        if (stop.should_stop(iter)) {
            stage.early_stop_iter = iter;
            break;
        }
    }
    if (!have_best) best = Image(forward(gen, z));

    ReconstructResult res;
    res.out = std::move(best);
    stage.final_losses["loss_ir"] = loss_ir(input, res.out, transform);
    stage.final_losses["total"] = stage.final_losses["loss_ir"];
    stage.wall_time_s = seconds_since(t0);
    res.stage = std::move(stage);
    return res;
}

SfeResult run_sfe(const Image& icfe, const Image& style, const FeatureExtractor& ext,
                  SfeMode beta, const LossWeights& w, const OptimizerConfig& opt,
                  int matting_pixel_cap) {
    const auto t0 = Clock::now();
    opt.validate();
    w.validate();
    require_pipeline_size(icfe, "run_sfe");
    require_pipeline_size(style, "run_sfe");

    const auto ctaps = content_taps();
    const auto staps = style_taps();
    const auto all_taps = union_taps();
    const std::vector<int> scales = {1, 2, 4};

    std::vector<Tensor> content_targets;
    {
        FeatureStack cf = extract(ext, icfe, ctaps);
        for (const auto& [n, m] : cf.maps) content_targets.push_back(m);
    }

    std::vector<Tensor> gram_targets;   // photo
    std::vector<Tensor> style_maps;     // artistic
    std::unique_ptr<MattingLaplacian> lap;
    int cap_factor = 1;
    if (beta == SfeMode::photo) {
        FeatureStack sf = extract(ext, style, staps);
        for (const auto& [n, m] : sf.maps) gram_targets.push_back(gram_matrix(m));
        while ((icfe.height() / cap_factor) * (icfe.width() / cap_factor) > matting_pixel_cap)
            ++cap_factor;
        Transform down{Transform::Kind::downsample, cap_factor};
        const Image lap_src = cap_factor > 1 ? down.apply(icfe) : icfe;
        lap = std::make_unique<MattingLaplacian>(matting_laplacian(lap_src));
    } else {
        FeatureStack sf = extract(ext, style, staps);
        for (const auto& [n, m] : sf.maps) style_maps.push_back(m);
    }

    Tensor x = icfe.px;  // pixel-space parameter, raw during optimization
    Adam adam(opt.step_size);
    StageRecord stage;
    stage.name = beta == SfeMode::photo ? "sfe_photo" : "sfe_artistic";
    stage.seed = opt.seed;
    EmaTracker ema;
    int last_finite = 0;

    for (int iter = 1; iter <= opt.iterations; ++iter) {
        ad::Tape tape;
        ad::Var xv = tape.leaf(x, true);
        auto tap_vars = ext.on_tape(tape, xv, all_taps);
        std::vector<ad::Var> svars, cvars;
        for (std::size_t i = 0; i < staps.size(); ++i) svars.push_back(tap_vars[i].second);
        for (std::size_t i = staps.size(); i < tap_vars.size(); ++i)
            cvars.push_back(tap_vars[i].second);

        ad::Var l_c = build_content_from_vars(tape, cvars, content_targets);
        ad::Var l_s, l_m, total;
        if (beta == SfeMode::photo) {
            l_s = build_style_from_vars(tape, svars, gram_targets);
            ad::Var xm = cap_factor > 1 ? tape.area_downsample(xv, cap_factor) : xv;
            l_m = build_loss_affine(tape, *lap, xm);
            total = tape.add(l_m, tape.add(tape.affine(l_c, w.mu), tape.affine(l_s, w.kappa)));
        } else {
            const std::uint64_t site_seed =
                derive_seed(opt.seed, 0xae000000ull + static_cast<std::uint64_t>(iter));
            ad::Var xh = build_hypercolumns(tape, svars, scales, w.remd_max_sites, site_seed);
            const Tensor sh =
                hypercolumns_const(style_maps, scales, w.remd_max_sites, site_seed);
            l_s = build_remd(tape, xh, sh);
            total = tape.add(tape.affine(l_c, w.mu), tape.affine(l_s, w.kappa));
        }
        const double tv = tape.value(total)[0];
        check_finite_or_throw(tv, iter, last_finite, stage.name.c_str());
        last_finite = iter;
        ema.observe(tv);

        tape.backward(total);
        adam.step({&x}, {&tape.grad_ref(xv)});

        if (iter % opt.log_every == 0 || iter == opt.iterations) {
            LossRow row;
            row.iter = iter;
            row.total = tv;
            row.ema = ema.value;
            row.components["loss_c"] = tape.value(l_c)[0];
            row.components["loss_s"] = tape.value(l_s)[0];
            if (beta == SfeMode::photo) row.components["loss_m"] = tape.value(l_m)[0];
            stage.rows.push_back(row);
        }
        stage.iterations_run = iter;
    }

    SfeResult res;
    Tensor out = x;
    out.clamp(0.0, 1.0);
    res.out = Image(std::move(out));
    if (!stage.rows.empty()) {
        stage.final_losses = stage.rows.back().components;
        stage.final_losses["total"] = stage.rows.back().total;
    }
    stage.wall_time_s = seconds_since(t0);
    res.stage = std::move(stage);
    return res;
}

namespace {

nlohmann::json weights_to_json(const LossWeights& w) {
    return {{"mu", w.mu},
            {"kappa", w.kappa},
            {"lambda_cl", w.lambda_cl},
            {"cx_bandwidth", w.cx_bandwidth},
            {"cx_epsilon", w.cx_epsilon},
            {"remd_max_sites", w.remd_max_sites}};
}

nlohmann::json opt_to_json(const OptimizerConfig& o) {
    return {{"step_size", o.step_size},
            {"iterations", o.iterations},
            {"seed", o.seed},
            {"jitter_sigma", o.jitter_sigma},
            {"log_every", o.log_every}};
}

nlohmann::json spec_to_json(const GeneratorSpec& s) {
    return {{"depth", s.depth},
            {"channels", s.channels},
            {"skip_connections", s.skip_connections},
            {"output_channels", s.output_channels},
            {"input_channels", s.input_channels}};
}

}  // namespace

DilieResult run_dilie(const Image& input, const Image& style, const FeatureExtractor& ext,
                      const DilieOptions& options) {
    const auto t0 = Clock::now();
    DilieResult res;
    RunManifest& m = res.manifest;

    m.config["alpha"] = to_string(options.alpha);
    m.config["beta"] = to_string(options.beta);
    m.config["weights"] = weights_to_json(options.weights);
    m.config["cfe_opt"] = opt_to_json(options.cfe_opt);
    m.config["sfe_opt"] = opt_to_json(options.sfe_opt);
    m.config["matting_pixel_cap"] = options.matting_pixel_cap;
    if (options.alpha == CfeMode::decompose) {
        m.config["specs"]["clean"] = spec_to_json(options.decompose.clean);
        m.config["specs"]["mask"] = spec_to_json(options.decompose.mask);
        m.config["specs"]["haze"] = spec_to_json(options.decompose.haze);
        m.config["specs"]["uniform_airlight"] = options.decompose.uniform_airlight;
    } else {
        m.config["specs"]["reconstruct"] = spec_to_json(options.reconstruct);
        m.config["early_stop"] = {{"window", options.stop.window},
                                  {"patience", options.stop.patience},
                                  {"ema_alpha", options.stop.ema_alpha},
                                  {"min_rel_improvement", options.stop.min_rel_improvement}};
    }

    m.images.emplace_back("input", input);
    Image cfe;
    if (options.alpha == CfeMode::decompose) {
        try {
            DecompositionResult dr = run_cfe_decompose(input, ext, options.decompose,
                                                       options.weights, options.cfe_opt);
            cfe = dr.clean;
            m.stages.push_back(dr.stage);
            m.images.emplace_back("cfe", dr.clean);
            m.images.emplace_back("haze", Image(dr.haze.values));
            m.aux["mask"] = dr.mask.values;
        } catch (const RunError& e) {
            throw RunError(std::string("[cfe_decompose] ") + e.what(),
                           e.last_finite_iteration);
        }
    } else {
        try {
            ReconstructResult rr = run_cfe_reconstruct(input, options.reconstruct,
                                                       options.transform, options.cfe_opt,
                                                       options.stop);
            cfe = rr.out;
            m.stages.push_back(rr.stage);
            m.images.emplace_back("cfe", rr.out);
        } catch (const RunError& e) {
            throw RunError(std::string("[cfe_reconstruct] ") + e.what(),
                           e.last_finite_iteration);
        }
    }

    try {
        SfeResult sr = run_sfe(cfe, style, ext, options.beta, options.weights,
                               options.sfe_opt, options.matting_pixel_cap);
        res.istar = sr.out;
        m.stages.push_back(sr.stage);
    } catch (const RunError& e) {
        throw RunError(std::string("[sfe] ") + e.what(), e.last_finite_iteration);
    }
    m.images.emplace_back("output", res.istar);

    m.metrics["ssim_input_output"] = ssim(input, res.istar);
    m.metrics["delta_l2_input_output"] = image_delta(input, res.istar, Norm::L2);
    m.wall_time_s = seconds_since(t0);
    return res;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j;
    j["config"] = m.config;
    j["wall_time_s"] = m.wall_time_s;
    {
        char buf[32];
        const std::time_t now = std::time(nullptr);
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        j["created_utc"] = buf;
    }
    for (const auto& s : m.stages) {
        nlohmann::json sj;
        sj["name"] = s.name;
        sj["seed"] = s.seed;
        sj["iterations_run"] = s.iterations_run;
        sj["early_stop_iter"] = s.early_stop_iter;
        sj["wall_time_s"] = s.wall_time_s;
        sj["final_losses"] = s.final_losses;
        for (const auto& r : s.rows) {
            nlohmann::json rj;
            rj["iter"] = r.iter;
            rj["total"] = r.total;
            rj["ema"] = r.ema;
            rj["components"] = r.components;
            sj["rows"].push_back(rj);
        }
        j["stages"].push_back(sj);
    }
    for (const auto& [name, img] : m.images) j["images"][name] = name + ".png";
    for (const auto& [name, t] : m.aux) j["aux"][name] = name + ".png";
    j["metrics"] = m.metrics;
    return j;
}

std::string losses_csv(const RunManifest& m) {
    static const std::vector<std::string> cols = {"loss_id", "loss_cl", "loss_ir",
                                                  "loss_m", "loss_c", "loss_s"};
    std::string out = "stage,iter,total,ema";
    for (const auto& c : cols) out += "," + c;
    out += "\n";
    char buf[64];
    for (const auto& s : m.stages) {
        for (const auto& r : s.rows) {
            std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g", r.iter, r.total, r.ema);
            out += s.name + "," + buf;
            for (const auto& c : cols) {
                const auto it = r.components.find(c);
                if (it == r.components.end()) {
                    out += ",";
                } else {
                    std::snprintf(buf, sizeof buf, ",%.12g", it->second);
                    out += buf;
                }
            }
            out += "\n";
        }
    }
    return out;
}

void write_run_directory(const std::string& dir, const RunManifest& m) {
    ensure_directory(dir);
    for (const auto& [name, img] : m.images) save_image(dir + "/" + name + ".png", img);
    for (const auto& [name, t] : m.aux) {
        // single-channel planes are written as gray images
        Tensor rgb({3, t.height(), t.width()});
        const std::size_t plane = static_cast<std::size_t>(t.height()) * t.width();
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                rgb[static_cast<std::size_t>(c) * plane + i] = t[i];
        save_image(dir + "/" + name + ".png", Image(std::move(rgb)));
    }
    write_text_atomic(dir + "/losses.csv", losses_csv(m));
    write_text_atomic(dir + "/manifest.json", manifest_to_json(m).dump(2) + "\n");
}

}  // namespace dilie
