#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "dilie/tensor.hpp"

namespace dilie {

enum class ColorSpace { linear_rgb };

// H x W x 3 image with values in [0, 1], stored channel-major ({3, H, W}).
// Every public operation keeps values finite and inside the range.
struct Image {
    Tensor px;  // {3, H, W}
    ColorSpace color_space = ColorSpace::linear_rgb;

    Image() = default;
    explicit Image(int h, int w, double fill = 0.0) : px({3, h, w}, fill) {}
    explicit Image(Tensor t);  // validates shape, clamps into [0,1]

    int height() const { return px.height(); }
    int width() const { return px.width(); }
    double& at(int c, int y, int x) { return px.at(c, y, x); }
    double at(int c, int y, int x) const { return px.at(c, y, x); }
};

// Per-pixel scene-light fraction, {1, H, W}, values in [0, 1].
struct TransmissionMap {
    Tensor values;

    TransmissionMap() = default;
    explicit TransmissionMap(Tensor t);
    static TransmissionMap constant(int h, int w, double v);

    int height() const { return values.height(); }
    int width() const { return values.width(); }
};

// Ambient light layer: spatially varying {3, H, W}, or one RGB triple
// broadcast over the plane (uniform-airlight mode).
struct HazeLayer {
    Tensor values;  // always materialized as {3, H, W}
    bool uniform = false;

    HazeLayer() = default;
    explicit HazeLayer(Tensor t);
    static HazeLayer uniform_rgb(std::array<double, 3> rgb, int h, int w);

    std::array<double, 3> rgb_at_origin() const;
};

enum class CorruptionKind { haze, gaussian_noise };

// Ground-truth sidecar for a synthetic corruption; serializable to JSON.
struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    double sigma = 0.0;                                   // gaussian_noise
    std::optional<std::array<double, 3>> airlight;        // haze
    std::optional<double> transmission_scalar;            // haze, uniform map
    std::optional<TransmissionMap> transmission;          // haze, full map
    std::uint64_t seed = 0;

    void validate() const;  // throws ArgumentError on kind/field mismatch
};

enum class Norm { L1, L2 };

// I(p) = clean(p) * M(p) + airlight(p) * (1 - M(p)), clamped into [0, 1].
Image compose_haze(const Image& clean, const HazeLayer& airlight,
                   const TransmissionMap& transmission);

// clamp(clean + eps, 0, 1) with eps ~ N(0, sigma^2) i.i.d. per element.
Image add_noise(const Image& clean, double sigma, std::uint64_t seed);

// Mean absolute (L1) or root-mean-square (L2) pixel difference.
double image_delta(const Image& a, const Image& b, Norm norm);

Image apply_corruption(const Image& clean, const CorruptionSpec& spec);

}  // namespace dilie
