#include "dilie/generators.hpp"

#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/rng.hpp"

namespace dilie {

namespace {

// Walks the architecture once. In `init` mode it creates parameter tensors;
// in `build` mode it consumes them in the identical order and emits tape ops.
struct NetBuilder {
    const GeneratorSpec& spec;
    Generator* init_target = nullptr;       // init mode
    ad::Tape* tape = nullptr;               // build mode
    const std::vector<Tensor>* params = nullptr;
    std::vector<ad::Var>* param_vars = nullptr;
    bool require_grad = true;
    std::size_t cursor = 0;
    Rng rng{0};

    ad::Var take(const std::string& name, std::vector<int> dims, bool is_norm_gain,
                 bool is_norm_bias, int fan_in) {
        if (init_target) {
            Tensor t(dims);
            if (is_norm_gain) {
                t.fill(1.0);
            } else if (is_norm_bias) {
                t.fill(0.0);
            } else {
                const double bound = 1.0 / std::sqrt(double(fan_in));
                for (double& v : t.vec()) v = rng.uniform(-bound, bound);
            }
            init_target->params.push_back(std::move(t));
            init_target->param_names.push_back(name);
            return {};
        }
        ad::Var v = tape->leaf((*params)[cursor], require_grad);
        if (param_vars) param_vars->push_back(v);
        ++cursor;
        return v;
    }

    ad::Var conv(ad::Var x, const std::string& name, int cin, int cout, int k,
                 int stride) {
        ad::Var w = take(name + ".weight", {cout, cin, k, k}, false, false, cin * k * k);
        ad::Var b = take(name + ".bias", {cout}, false, false, cin * k * k);
        if (init_target) return {};
        return tape->conv2d(x, w, b, stride, k / 2);
    }

    ad::Var norm(ad::Var x, const std::string& name, int c) {
        ad::Var g = take(name + ".gain", {c}, true, false, 0);
        ad::Var b = take(name + ".bias", {c}, false, true, 0);
        if (init_target) return {};
        return tape->instance_norm(x, g, b, GeneratorSpec::norm_eps);
    }

    ad::Var act(ad::Var x) {
        if (init_target) return {};
        return tape->leaky_relu(x, GeneratorSpec::leaky_slope);
    }

    ad::Var run(ad::Var input) {
        const int depth = spec.depth;
        const auto& ch = spec.channels;
        std::vector<ad::Var> enc(static_cast<std::size_t>(depth));
        std::vector<ad::Var> skips(static_cast<std::size_t>(depth));

        ad::Var x = input;
        for (int i = 0; i < depth; ++i) {
            const int cin = i == 0 ? spec.input_channels : ch[static_cast<std::size_t>(i - 1)];
            const int c = ch[static_cast<std::size_t>(i)];
            const std::string tag = "enc" + std::to_string(i);
            x = act(norm(conv(x, tag + ".down", cin, c, 3, 2), tag + ".n1", c));
            x = act(norm(conv(x, tag + ".conv", c, c, 3, 1), tag + ".n2", c));
            enc[static_cast<std::size_t>(i)] = x;
        }
        if (spec.skip_connections) {
            for (int i = 0; i < depth - 1; ++i) {
                const int c = ch[static_cast<std::size_t>(i)];
                const std::string tag = "skip" + std::to_string(i);
                skips[static_cast<std::size_t>(i)] =
                    act(norm(conv(enc[static_cast<std::size_t>(i)], tag + ".conv", c,
                                  GeneratorSpec::skip_channels, 1, 1),
                             tag + ".norm", GeneratorSpec::skip_channels));
            }
        }
        ad::Var d = enc[static_cast<std::size_t>(depth - 1)];
        for (int i = depth - 1; i >= 0; --i) {
            const int c = ch[static_cast<std::size_t>(i)];
            int tin = (i == depth - 1) ? c : ch[static_cast<std::size_t>(i + 1)];
            if (!init_target) d = tape->upsample_bilinear2(d);
            if (spec.skip_connections && i >= 1) {
                if (!init_target)
                    d = tape->concat_ch(d, skips[static_cast<std::size_t>(i - 1)]);
                tin += GeneratorSpec::skip_channels;
            }
            const std::string tag = "dec" + std::to_string(i);
            d = act(norm(conv(d, tag + ".conv", tin, c, 3, 1), tag + ".n1", c));
            d = act(norm(conv(d, tag + ".conv1x1", c, c, 1, 1), tag + ".n2", c));
        }
        d = conv(d, "head", ch[0], spec.output_channels, 1, 1);
        if (init_target) return {};
        return tape->sigmoid(d);
    }
};

int pad_to_multiple(int v, int m) { return (v % m == 0) ? 0 : m - (v % m); }

}  // namespace

void GeneratorSpec::validate() const {
    if (depth < 2) throw ArgumentError("GeneratorSpec: depth must be >= 2");
    if (static_cast<int>(channels.size()) != depth)
        throw ArgumentError("GeneratorSpec: channels list length must equal depth");
    for (int c : channels)
        if (c <= 0) throw ArgumentError("GeneratorSpec: channel counts must be positive");
    if (output_channels != 1 && output_channels != 3)
        throw ArgumentError("GeneratorSpec: output_channels must be 1 or 3");
    if (input_channels <= 0)
        throw ArgumentError("GeneratorSpec: input_channels must be positive");
}

std::size_t Generator::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params) n += p.numel();
    return n;
}

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
    spec.validate();
    Generator g;
    g.spec = spec;
    NetBuilder b{spec};
    b.init_target = &g;
    b.rng = Rng(derive_seed(seed, 0x67656eull));
    b.run({});
    return g;
}

NoiseSeedInput sample_noise_input(int h, int w, int channels, std::uint64_t seed,
                                  double jitter_sigma) {
    if (h < 32 || w < 32)
        throw ArgumentError("sample_noise_input: spatial size must be at least 32x32");
    if (channels <= 0) throw ArgumentError("sample_noise_input: channels must be positive");
    NoiseSeedInput z;
    z.seed = seed;
    z.jitter_sigma = jitter_sigma;
    z.values = Tensor({channels, h, w});
    Rng rng(derive_seed(seed, 0x7a696e70ull));
    for (double& v : z.values.vec()) v = 0.1 * rng.uniform();
    return z;
}

Tensor NoiseSeedInput::at_iteration(int iter) const {
    if (jitter_sigma <= 0.0) return values;
    Tensor out = values;
    Rng rng(derive_seed(seed, 0xa5a5a5ull + static_cast<std::uint64_t>(iter)));
    for (double& v : out.vec()) v += jitter_sigma * rng.normal();
    return out;
}

ad::Var generator_on_tape(ad::Tape& tape, const Generator& g, const Tensor& z,
                          std::vector<ad::Var>* param_vars,
                          bool params_require_grad) {
    if (z.ndim() != 3 || z.channels() != g.spec.input_channels)
        throw DimensionError("generator input has " + std::to_string(z.channels()) +
                             " channels, spec expects " +
                             std::to_string(g.spec.input_channels));
    const int h = z.height(), w = z.width();
    const int mult = 1 << g.spec.depth;
    const int pb = pad_to_multiple(h, mult), pr = pad_to_multiple(w, mult);

    ad::Var in = tape.leaf(z, false);
    if (pb || pr) in = tape.pad2d_replicate(in, pb, pr);

    NetBuilder b{g.spec};
    b.tape = &tape;
    b.params = &g.params;
    b.param_vars = param_vars;
    b.require_grad = params_require_grad;
    ad::Var out = b.run(in);
    if (b.cursor != g.params.size()) throw Error("generator parameter walk out of sync");
    if (pb || pr) out = tape.crop2d(out, h, w);
    return out;
}

Tensor forward(const Generator& g, const NoiseSeedInput& z) {
    ad::Tape tape;
    ad::Var out = generator_on_tape(tape, g, z.values, nullptr, false);
    return tape.value(out);
}

}  // namespace dilie
