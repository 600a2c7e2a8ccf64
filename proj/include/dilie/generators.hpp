#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dilie/ad.hpp"
#include "dilie/image.hpp"
#include "dilie/tensor.hpp"

namespace dilie {

// Hourglass encoder-decoder.
//
// Encoder level i (channels c_i, input p = previous level's channels,
// p_0 = input_channels):
//   conv3x3 stride2 (p -> c_i), inorm, lrelu(0.1)
//   conv3x3 stride1 (c_i -> c_i), inorm, lrelu
// Skip branch i (only when skip_connections, taken from encoder level i,
// feeds decoder level i+1): conv1x1 (c_i -> 4), inorm, lrelu.
// Decoder level i (deepest first; input = upsampled deeper feature,
// channel count t_i = (i == depth-1 ? c_i : c_{i+1}) + (skip ? 4 : 0),
// no skip at the outermost level):
//   bilinear x2 upsample, [concat skip], conv3x3 (t_i -> c_i), inorm, lrelu,
//   conv1x1 (c_i -> c_i), inorm, lrelu
// Head: conv1x1 (c_0 -> output_channels), sigmoid.
//
// Inputs whose sides are not multiples of 2^depth are replicate-padded
// internally; the output is cropped back, so output size always equals
// input size.
struct GeneratorSpec {
    int depth = 5;
    std::vector<int> channels = {16, 32, 64, 128, 128};
    bool skip_connections = true;
    int output_channels = 3;
    int input_channels = 32;

    static constexpr int skip_channels = 4;
    static constexpr double leaky_slope = 0.1;
    static constexpr double norm_eps = 1e-5;

    void validate() const;  // throws ArgumentError
};

// Per-iteration generator input: fixed uniform noise plus optional jitter.
struct NoiseSeedInput {
    Tensor values;  // {channels, H, W}, base draw in [0, 0.1]
    std::uint64_t seed = 0;
    double jitter_sigma = 0.0;

    // Base values with seeded Gaussian jitter for one iteration.
    Tensor at_iteration(int iter) const;
};

struct Generator {
    GeneratorSpec spec;
    std::vector<Tensor> params;
    std::vector<std::string> param_names;

    std::size_t parameter_count() const;
};

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed);

NoiseSeedInput sample_noise_input(int h, int w, int channels, std::uint64_t seed,
                                  double jitter_sigma = 0.0);

// Builds the generator onto a tape. Parameter leaves are created in the
// stored order and returned through param_vars so an optimizer can read
// their gradients. The output variable has shape
// {spec.output_channels, z.H, z.W} with values in (0, 1).
ad::Var generator_on_tape(ad::Tape& tape, const Generator& g, const Tensor& z,
                          std::vector<ad::Var>* param_vars,
                          bool params_require_grad = true);

// Plain forward pass; wraps a throwaway tape.
Tensor forward(const Generator& g, const NoiseSeedInput& z);

}  // namespace dilie
