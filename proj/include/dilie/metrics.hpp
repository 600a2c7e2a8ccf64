#pragma once

#include <functional>
#include <map>
#include <string>

#include "dilie/features.hpp"
#include "dilie/image.hpp"

namespace dilie {

// Structural similarity on luma (ITU 601 weights), 11x11 Gaussian window
// (sigma 1.5), data range 1.0, averaged over fully-valid windows.
double ssim(const Image& a, const Image& b);

// 10*log10(1/MSE), capped at 99 dB (also the exact-equality sentinel).
double psnr(const Image& a, const Image& b);

// Perceptual error backend: a frozen-feature distance by default, or a file
// of externally computed pair scores (for ingesting scores from trained
// perceptual metrics without bundling their networks).
class PerceptualErrorBackend {
public:
    enum class Kind { feature_distance, external_scores };

    static PerceptualErrorBackend feature_distance(const FeatureExtractor& ext);
    // CSV with header "path_a,path_b,score". Every requested pair must be
    // present (either order); there is no fallback.
    static PerceptualErrorBackend external_scores(const std::string& csv_path);

    Kind kind() const { return kind_; }
    const FeatureExtractor& extractor() const;
    double lookup(const std::string& path_a, const std::string& path_b) const;

private:
    Kind kind_ = Kind::feature_distance;
    const FeatureExtractor* ext_ = nullptr;
    std::map<std::pair<std::string, std::string>, double> scores_;
    std::string source_;
};

// Mean-squared difference of per-position unit-normalized activations over
// {conv1_2, conv2_2, conv3_2, conv4_2}, tap-averaged. Requires the
// feature_distance backend.
double perceptual_error(const Image& a, const Image& b,
                        const PerceptualErrorBackend& backend);

// Path-keyed variant: external backends look the pair up; feature backends
// load and compare the images.
double perceptual_error(const std::string& path_a, const std::string& path_b,
                        const PerceptualErrorBackend& backend);

using StylizeFn = std::function<Image(const Image& content, const Image& style)>;

// H = | E(clean, st(clean, style)) - E(clean, st(hazy, style)) |
double haze_corruption_h(const Image& clean, const Image& hazy, const Image& style,
                         const StylizeFn& st, const PerceptualErrorBackend& backend);

// Same score from already-persisted stylization outputs (external scores).
double haze_corruption_h_from_paths(const std::string& clean_path,
                                    const std::string& stylized_clean_path,
                                    const std::string& stylized_hazy_path,
                                    const PerceptualErrorBackend& backend);

}  // namespace dilie
