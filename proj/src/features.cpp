#include "dilie/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dilie/errors.hpp"
#include "dilie/rng.hpp"

namespace dilie {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'D', 'W', 'B', '1'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IntegrityError("weights blob truncated: " + path);
    return v;
}

std::map<std::string, Tensor> read_blob(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weights blob: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IntegrityError("not a DWB1 weights blob: " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion)
        throw IntegrityError("unsupported weights blob version in " + path);
    const auto count = get<std::uint32_t>(is, path);
    std::map<std::string, Tensor> out;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto keylen = get<std::uint32_t>(is, path);
        std::string key(keylen, '\0');
        is.read(key.data(), keylen);
        if (!is) throw IntegrityError("weights blob truncated: " + path);
        const auto ndim = get<std::uint32_t>(is, path);
        std::vector<int> dims(ndim);
        for (auto& d : dims) d = static_cast<int>(get<std::int32_t>(is, path));
        const auto checksum = get<std::uint64_t>(is, path);
        Tensor tensor(dims);
        is.read(reinterpret_cast<char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
        if (!is) throw IntegrityError("weights blob truncated: " + path);
        if (fnv1a64(tensor.data(), tensor.numel() * sizeof(double)) != checksum)
            throw IntegrityError("checksum mismatch for tensor '" + key + "' in " + path);
        out.emplace(std::move(key), std::move(tensor));
    }
    return out;
}

}  // namespace

const std::vector<ConvLayerDef>& vgg19_conv_layers() {
    static const std::vector<ConvLayerDef> layers = {
        {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, true},
        {"conv2_1", 64, 128, false},  {"conv2_2", 128, 128, true},
        {"conv3_1", 128, 256, false}, {"conv3_2", 256, 256, false},
        {"conv3_3", 256, 256, false}, {"conv3_4", 256, 256, true},
        {"conv4_1", 256, 512, false}, {"conv4_2", 512, 512, false},
        {"conv4_3", 512, 512, false}, {"conv4_4", 512, 512, true},
        {"conv5_1", 512, 512, false}, {"conv5_2", 512, 512, false},
        {"conv5_3", 512, 512, false}, {"conv5_4", 512, 512, false},
    };
    return layers;
}

std::vector<std::string> content_taps() { return {"conv4_2"}; }
std::vector<std::string> style_taps() { return {"conv1_2", "conv2_2", "conv3_2"}; }

bool FeatureExtractor::has_layer(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<std::pair<std::string, ad::Var>> FeatureExtractor::on_tape(
    ad::Tape& tape, ad::Var image, const std::vector<std::string>& taps) const {
    if (taps.empty()) throw ArgumentError("extract: tap list is empty");
    int deepest = -1;
    for (const auto& t : taps) {
        const auto it = std::find(names_.begin(), names_.end(), t);
        if (it == names_.end()) {
            std::string valid;
            for (const auto& n : names_) valid += (valid.empty() ? "" : ", ") + n;
            throw ArgumentError("unknown tap '" + t + "'; valid taps: " + valid);
        }
        deepest = std::max(deepest, static_cast<int>(it - names_.begin()));
    }

    // (x - mean) / std, channelwise
    Tensor m({3}), si({3});
    for (int c = 0; c < 3; ++c) {
        m[static_cast<std::size_t>(c)] = mean_[static_cast<std::size_t>(c)];
        si[static_cast<std::size_t>(c)] = 1.0 / std_[static_cast<std::size_t>(c)];
    }
    const int h = tape.value(image).height(), w = tape.value(image).width();
    ad::Var x = tape.mul(tape.sub(image, tape.broadcast_chw(tape.leaf(m), h, w)),
                         tape.broadcast_chw(tape.leaf(si), h, w));

    std::vector<ad::Var> acts(names_.size());
    const auto& arch = vgg19_conv_layers();
    for (int li = 0; li <= deepest; ++li) {
        const auto& l = layers_[static_cast<std::size_t>(li)];
        ad::Var wv = tape.leaf(l.first, false);
        ad::Var bv = tape.leaf(l.second, false);
        x = tape.relu(tape.conv2d(x, wv, bv, 1, 1));
        acts[static_cast<std::size_t>(li)] = x;
        if (arch[static_cast<std::size_t>(li)].pool_after && li < deepest)
            x = tape.maxpool2(x);
    }

    std::vector<std::pair<std::string, ad::Var>> out;
    for (const auto& t : taps) {
        const auto it = std::find(names_.begin(), names_.end(), t);
        out.emplace_back(t, acts[static_cast<std::size_t>(it - names_.begin())]);
    }
    return out;
}

const Tensor& FeatureStack::map(const std::string& name) const {
    for (const auto& [n, t] : maps)
        if (n == name) return t;
    throw ArgumentError("feature stack has no layer '" + name + "'");
}

Image extractor_probe_image() {
    Image img(64, 64);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                img.at(c, y, x) =
                    0.5 + 0.5 * std::sin(0.37 * (x + 9 * c) + 0.23 * y) *
                              std::cos(0.11 * y + 0.7 * c);
    return img;
}

FeatureExtractor load_extractor(const std::string& weights_path) {
    FeatureExtractor ext;
    ext.source_ = weights_path;

    auto tensors = read_blob(weights_path);

    const std::string sidecar_path = weights_path + ".json";
    std::ifstream sj(sidecar_path);
    if (!sj) throw IoError("cannot open weights sidecar: " + sidecar_path);
    json sidecar;
    try {
        sj >> sidecar;
    } catch (const json::exception& e) {
        throw IntegrityError("malformed weights sidecar " + sidecar_path + ": " + e.what());
    }

    const auto& pre = sidecar.at("preprocess");
    for (int c = 0; c < 3; ++c) {
        ext.mean_[static_cast<std::size_t>(c)] = pre.at("mean").at(c).get<double>();
        ext.std_[static_cast<std::size_t>(c)] = pre.at("std").at(c).get<double>();
        if (ext.std_[static_cast<std::size_t>(c)] <= 0.0)
            throw IntegrityError("non-positive preprocessing std in " + sidecar_path);
    }

    for (const ConvLayerDef& def : vgg19_conv_layers()) {
        const auto& entry = sidecar.at("layers").at(def.name);
        const std::string wkey = entry.at("weight").get<std::string>();
        const std::string bkey = entry.at("bias").get<std::string>();
        const auto wi = tensors.find(wkey);
        const auto bi = tensors.find(bkey);
        if (wi == tensors.end() || bi == tensors.end())
            throw IntegrityError(std::string("weights blob is missing tensors for layer ") +
                                 def.name);
        const Tensor& w = wi->second;
        const Tensor& b = bi->second;
        if (w.ndim() != 4 || w.dim(0) != def.out_channels || w.dim(1) != def.in_channels ||
            w.dim(2) != 3 || w.dim(3) != 3)
            throw IntegrityError(std::string("layer ") + def.name +
                                 " weight shape does not match the published architecture");
        if (b.ndim() != 1 || b.dim(0) != def.out_channels)
            throw IntegrityError(std::string("layer ") + def.name +
                                 " bias shape does not match the published architecture");
        ext.layers_.emplace_back(w, b);
        ext.names_.emplace_back(def.name);
    }

    // Self-test: one forward pass over the whole stack must stay finite.
    FeatureStack probe = extract(ext, extractor_probe_image(), {"conv5_4"});
    if (!probe.maps.front().second.all_finite())
        throw IntegrityError("extractor self-test produced non-finite activations: " +
                             weights_path);
    return ext;
}

FeatureStack extract(const FeatureExtractor& ext, const Image& img,
                     const std::vector<std::string>& taps) {
    ad::Tape tape;
    ad::Var in = tape.leaf(img.px, false);
    auto vars = ext.on_tape(tape, in, taps);
    FeatureStack stack;
    stack.source_shape = {img.height(), img.width()};
    for (auto& [name, var] : vars) stack.maps.emplace_back(name, tape.value(var));
    return stack;
}

void write_extractor_weights(const std::string& path,
                             const std::map<std::string, Tensor>& tensors,
                             const std::array<double, 3>& mean,
                             const std::array<double, 3>& stdev) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write weights blob: " + path);
    os.write(kMagic, 4);
    put(os, kVersion);
    put(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [key, tensor] : tensors) {
        put(os, static_cast<std::uint32_t>(key.size()));
        os.write(key.data(), static_cast<std::streamsize>(key.size()));
        put(os, static_cast<std::uint32_t>(tensor.ndim()));
        for (int d : tensor.dims()) put(os, static_cast<std::int32_t>(d));
        put(os, fnv1a64(tensor.data(), tensor.numel() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing weights blob: " + path);
    os.close();

    json sidecar;
    sidecar["preprocess"]["mean"] = mean;
    sidecar["preprocess"]["std"] = stdev;
    for (const ConvLayerDef& def : vgg19_conv_layers()) {
        sidecar["layers"][def.name]["weight"] = std::string(def.name) + ".weight";
        sidecar["layers"][def.name]["bias"] = std::string(def.name) + ".bias";
    }
    std::ofstream sj(path + ".json", std::ios::trunc);
    if (!sj) throw IoError("cannot write weights sidecar: " + path + ".json");
    sj << sidecar.dump(2) << "\n";
}

std::map<std::string, Tensor> make_seeded_extractor_weights(std::uint64_t seed) {
    std::map<std::string, Tensor> out;
    std::uint64_t stream = 0;
    for (const ConvLayerDef& def : vgg19_conv_layers()) {
        Rng rng(derive_seed(seed, 0x766767ull + stream++));
        Tensor w({def.out_channels, def.in_channels, 3, 3});
        const double scale = std::sqrt(2.0 / (9.0 * def.in_channels));
        for (double& v : w.vec()) v = scale * rng.normal();
        out.emplace(std::string(def.name) + ".weight", std::move(w));
        out.emplace(std::string(def.name) + ".bias", Tensor({def.out_channels}, 0.0));
    }
    return out;
}

void write_seeded_extractor(const std::string& path, std::uint64_t seed) {
    write_extractor_weights(path, make_seeded_extractor_weights(seed),
                            {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225});
}

}  // namespace dilie
