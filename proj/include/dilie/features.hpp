#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dilie/ad.hpp"
#include "dilie/image.hpp"
#include "dilie/tensor.hpp"

namespace dilie {

// One conv layer of the published 19-layer architecture (16 convs feeding
// 3 fully-connected layers; only the convolutional stack is carried here).
struct ConvLayerDef {
    const char* name;
    int in_channels;
    int out_channels;
    bool pool_after;  // 2x2 max pool follows this layer
};

// The architecture list the loader validates weights files against. Also
// shipped as resources/vgg19_arch.json for external weight converters.
const std::vector<ConvLayerDef>& vgg19_conv_layers();

// Frozen convolutional feature extractor. Weights never receive gradients;
// taps are the post-ReLU outputs of the named conv layers.
class FeatureExtractor {
public:
    const std::string& weights_source() const { return source_; }
    const std::vector<std::string>& layer_names() const { return names_; }
    const std::array<double, 3>& mean() const { return mean_; }
    const std::array<double, 3>& stdev() const { return std_; }

    bool has_layer(const std::string& name) const;

    // Builds the conv stack on a tape up to the deepest requested tap and
    // returns tap name -> post-ReLU activation var, in request order.
    std::vector<std::pair<std::string, ad::Var>> on_tape(
        ad::Tape& tape, ad::Var image, const std::vector<std::string>& taps) const;

    friend FeatureExtractor load_extractor(const std::string& weights_path);

private:
    std::string source_;
    std::vector<std::string> names_;
    std::vector<std::pair<Tensor, Tensor>> layers_;  // (weight, bias) per conv
    std::array<double, 3> mean_{};
    std::array<double, 3> std_{};
};

struct FeatureStack {
    std::vector<std::pair<std::string, Tensor>> maps;
    std::pair<int, int> source_shape{0, 0};

    const Tensor& map(const std::string& name) const;
};

// Default tap sets.
std::vector<std::string> content_taps();  // {conv4_2}
std::vector<std::string> style_taps();    // {conv1_2, conv2_2, conv3_2}

// Loads a weights blob (see docs in README: "DWB1" container + JSON
// sidecar), validates tensor shapes against the published architecture and
// the per-tensor checksums, and runs a fixed 64x64 probe forward pass.
FeatureExtractor load_extractor(const std::string& weights_path);

Image extractor_probe_image();
FeatureStack extract(const FeatureExtractor& ext, const Image& img,
                     const std::vector<std::string>& taps);

// --- weights container ---------------------------------------------------

// Writes tensors into the DWB1 blob at `path` plus the `path + ".json"`
// sidecar mapping layer names to tensor keys and carrying the preprocessing
// statistics.
void write_extractor_weights(const std::string& path,
                             const std::map<std::string, Tensor>& tensors,
                             const std::array<double, 3>& mean,
                             const std::array<double, 3>& stdev);

// Deterministic He-initialized weights for the published architecture.
// Not a trained network: features are random projections, useful for
// self-contained runs and tests; swap in converted pretrained weights for
// production-quality stylization.
std::map<std::string, Tensor> make_seeded_extractor_weights(std::uint64_t seed);

// Convenience: generate-and-write in one step.
void write_seeded_extractor(const std::string& path, std::uint64_t seed);

}  // namespace dilie
