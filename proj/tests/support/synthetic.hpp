#pragma once

#include <cstdint>

#include "dilie/image.hpp"

namespace dilie::testsupport {

// Procedural photo-like scene: sky gradient, a few soft-edged colored
// shapes, mid-frequency texture. Spans almost the full [0,1] range so
// haze-decomposition feasibility is pinned by the bright and dark pixels.
Image synthetic_scene(int h, int w, std::uint64_t seed);

// Saturated style source dominated by one channel (0=R,1=G,2=B).
Image synthetic_style(int h, int w, std::uint64_t seed, int dominant_channel);

// Flat gray with a faint texture (keeps extractor features non-degenerate).
Image synthetic_gray(int h, int w, std::uint64_t seed);

}  // namespace dilie::testsupport
