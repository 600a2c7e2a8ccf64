#include "dilie/image.hpp"

#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/rng.hpp"

namespace dilie {

namespace {

void require_3hw(const Tensor& t, const char* what) {
    if (t.ndim() != 3 || t.channels() != 3)
        throw DimensionError(std::string(what) + ": expected a {3, H, W} tensor");
}

void require_same_plane(int h, int w, const Tensor& t, const char* what) {
    if (t.height() != h || t.width() != w)
        throw DimensionError(std::string(what) + ": spatial size " +
                             std::to_string(t.height()) + "x" + std::to_string(t.width()) +
                             " does not match " + std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

Image::Image(Tensor t) {
    require_3hw(t, "Image");
    if (!t.all_finite()) throw ArgumentError("Image: non-finite pixel value");
    t.clamp(0.0, 1.0);
    px = std::move(t);
}

TransmissionMap::TransmissionMap(Tensor t) {
    if (t.ndim() != 3 || t.channels() != 1)
        throw DimensionError("TransmissionMap: expected a {1, H, W} tensor");
    if (!t.all_finite()) throw ArgumentError("TransmissionMap: non-finite value");
    t.clamp(0.0, 1.0);
    values = std::move(t);
}

TransmissionMap TransmissionMap::constant(int h, int w, double v) {
    return TransmissionMap(Tensor({1, h, w}, v));
}

HazeLayer::HazeLayer(Tensor t) {
    require_3hw(t, "HazeLayer");
    if (!t.all_finite()) throw ArgumentError("HazeLayer: non-finite value");
    t.clamp(0.0, 1.0);
    values = std::move(t);
}

HazeLayer HazeLayer::uniform_rgb(std::array<double, 3> rgb, int h, int w) {
    HazeLayer layer;
    layer.values = Tensor({3, h, w});
    for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, rgb[static_cast<std::size_t>(c)]));
        for (int i = 0; i < h * w; ++i)
            layer.values[static_cast<std::size_t>(c) * h * w + i] = v;
    }
    layer.uniform = true;
    return layer;
}

std::array<double, 3> HazeLayer::rgb_at_origin() const {
    return {values.at(0, 0, 0), values.at(1, 0, 0), values.at(2, 0, 0)};
}

void CorruptionSpec::validate() const {
    if (kind == CorruptionKind::gaussian_noise) {
        if (sigma <= 0.0) throw ArgumentError("gaussian_noise corruption requires sigma > 0");
    } else {
        if (!airlight) throw ArgumentError("haze corruption requires an airlight triple");
        if (!transmission_scalar && !transmission)
            throw ArgumentError("haze corruption requires a transmission map or scalar");
    }
}

Image compose_haze(const Image& clean, const HazeLayer& airlight,
                   const TransmissionMap& transmission) {
    const int h = clean.height(), w = clean.width();
    require_same_plane(h, w, airlight.values, "compose_haze: airlight");
    require_same_plane(h, w, transmission.values, "compose_haze: transmission");

    Image out(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c) {
        const double* cl = clean.px.data() + c * plane;
        const double* al = airlight.values.data() + c * plane;
        const double* m = transmission.values.data();
        double* o = out.px.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = cl[i] * m[i] + al[i] * (1.0 - m[i]);
            o[i] = std::min(1.0, std::max(0.0, v));
        }
    }
    return out;
}

Image add_noise(const Image& clean, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ArgumentError("add_noise: sigma must be >= 0");
    Image out = clean;
    if (sigma == 0.0) return out;
    Rng rng(derive_seed(seed, 0x6e6f697365ull));
    for (double& v : out.px.vec())
        v = std::min(1.0, std::max(0.0, v + sigma * rng.normal()));
    return out;
}

double image_delta(const Image& a, const Image& b, Norm norm) {
    if (!a.px.same_shape(b.px))
        throw DimensionError("image_delta: images differ in shape");
    const std::size_t n = a.px.numel();
    double acc = 0.0;
    if (norm == Norm::L1) {
        for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a.px[i] - b.px[i]);
        return acc / double(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.px[i] - b.px[i];
        acc += d * d;
    }
    return std::sqrt(acc / double(n));
}

Image apply_corruption(const Image& clean, const CorruptionSpec& spec) {
    spec.validate();
    if (spec.kind == CorruptionKind::gaussian_noise)
        return add_noise(clean, spec.sigma, spec.seed);
    const int h = clean.height(), w = clean.width();
    const HazeLayer air = HazeLayer::uniform_rgb(*spec.airlight, h, w);
    if (spec.transmission) return compose_haze(clean, air, *spec.transmission);
    return compose_haze(clean, air, TransmissionMap::constant(h, w, *spec.transmission_scalar));
}

}  // namespace dilie
