#include "dilie/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dilie/data_io.hpp"
#include "dilie/errors.hpp"

namespace dilie {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> luma(const Image& img) {
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<double> y(plane);
    const double* r = img.px.data();
    const double* g = r + plane;
    const double* b = g + plane;
    for (std::size_t i = 0; i < plane; ++i)
        y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    return y;
}

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kSsimWindow);
    const double c = (kSsimWindow - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        k[static_cast<std::size_t>(i)] =
            std::exp(-((i - c) * (i - c)) / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable valid-region filtering: output is (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, int& oh,
                                 int& ow) {
    static const std::vector<double> k = gaussian_kernel();
    const int r = kSsimWindow - 1;
    ow = w - r;
    oh = h - r;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t)
                s += k[static_cast<std::size_t>(t)] * in[static_cast<std::size_t>(y) * w + x + t];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t)
                s += k[static_cast<std::size_t>(t)] * tmp[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

const std::vector<std::string>& perceptual_taps() {
    static const std::vector<std::string> taps = {"conv1_2", "conv2_2", "conv3_2",
                                                  "conv4_2"};
    return taps;
}

// Per-position unit normalization of a {C,H,W} map.
void unit_normalize_positions(Tensor& map) {
    const int c = map.channels();
    const std::size_t plane = static_cast<std::size_t>(map.height()) * map.width();
    for (std::size_t p = 0; p < plane; ++p) {
        double n2 = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            const double v = map[static_cast<std::size_t>(ci) * plane + p];
            n2 += v * v;
        }
        const double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
        for (int ci = 0; ci < c; ++ci) map[static_cast<std::size_t>(ci) * plane + p] *= inv;
    }
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.px.same_shape(b.px)) throw DimensionError("ssim: images differ in shape");
    const int h = a.height(), w = a.width();
    if (h < kSsimWindow || w < kSsimWindow)
        throw ArgumentError("ssim: images must be at least 11x11");

    const std::vector<double> x = luma(a), y = luma(b);
    const std::size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    int oh = 0, ow = 0;
    const auto mx = filter_valid(x, h, w, oh, ow);
    const auto my = filter_valid(y, h, w, oh, ow);
    const auto mxx = filter_valid(xx, h, w, oh, ow);
    const auto myy = filter_valid(yy, h, w, oh, ow);
    const auto mxy = filter_valid(xy, h, w, oh, ow);

    double acc = 0.0;
    const std::size_t m = mx.size();
    for (std::size_t i = 0; i < m; ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2);
        acc += num / den;
    }
    return acc / double(m);
}

double psnr(const Image& a, const Image& b) {
    if (!a.px.same_shape(b.px)) throw DimensionError("psnr: images differ in shape");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.px.numel(); ++i) {
        const double d = a.px[i] - b.px[i];
        mse += d * d;
    }
    mse /= double(a.px.numel());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

PerceptualErrorBackend PerceptualErrorBackend::feature_distance(const FeatureExtractor& ext) {
    PerceptualErrorBackend be;
    be.kind_ = Kind::feature_distance;
    be.ext_ = &ext;
    return be;
}

PerceptualErrorBackend PerceptualErrorBackend::external_scores(const std::string& csv_path) {
    PerceptualErrorBackend be;
    be.kind_ = Kind::external_scores;
    be.source_ = csv_path;
    std::ifstream is(csv_path);
    if (!is) throw IoError("cannot open external score file: " + csv_path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("path_a,path_b,score", 0) != 0)
        throw IoError("external score file must start with header path_a,path_b,score: " +
                      csv_path);
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, s;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, s))
            throw IoError("malformed score row at line " + std::to_string(lineno) + " of " +
                          csv_path);
        be.scores_[{a, b}] = std::stod(s);
    }
    return be;
}

const FeatureExtractor& PerceptualErrorBackend::extractor() const {
    if (!ext_) throw ArgumentError("perceptual backend has no feature extractor");
    return *ext_;
}

double PerceptualErrorBackend::lookup(const std::string& path_a,
                                      const std::string& path_b) const {
    auto it = scores_.find({path_a, path_b});
    if (it == scores_.end()) it = scores_.find({path_b, path_a});
    if (it == scores_.end())
        throw LookupError("external score file " + source_ + " has no entry for pair (" +
                          path_a + ", " + path_b + ")");
    return it->second;
}

double perceptual_error(const Image& a, const Image& b,
                        const PerceptualErrorBackend& backend) {
    if (backend.kind() == PerceptualErrorBackend::Kind::external_scores)
        throw ArgumentError(
            "external score backend needs image paths; use the path-based overload");
    if (!a.px.same_shape(b.px))
        throw DimensionError("perceptual_error: images differ in shape");
    FeatureStack fa = extract(backend.extractor(), a, perceptual_taps());
    FeatureStack fb = extract(backend.extractor(), b, perceptual_taps());
    double acc = 0.0;
    for (std::size_t t = 0; t < fa.maps.size(); ++t) {
        Tensor ma = fa.maps[t].second;
        Tensor mb = fb.maps[t].second;
        unit_normalize_positions(ma);
        unit_normalize_positions(mb);
        double mse = 0.0;
        for (std::size_t i = 0; i < ma.numel(); ++i) {
            const double d = ma[i] - mb[i];
            mse += d * d;
        }
        acc += mse / double(ma.numel());
    }
    return acc / double(fa.maps.size());
}

double perceptual_error(const std::string& path_a, const std::string& path_b,
                        const PerceptualErrorBackend& backend) {
    if (backend.kind() == PerceptualErrorBackend::Kind::external_scores)
        return backend.lookup(path_a, path_b);
    return perceptual_error(load_image(path_a, 0), load_image(path_b, 0), backend);
}

double haze_corruption_h(const Image& clean, const Image& hazy, const Image& style,
                         const StylizeFn& st, const PerceptualErrorBackend& backend) {
    const Image out_clean = st(clean, style);
    const Image out_hazy = st(hazy, style);
    return std::fabs(perceptual_error(clean, out_clean, backend) -
                     perceptual_error(clean, out_hazy, backend));
}

double haze_corruption_h_from_paths(const std::string& clean_path,
                                    const std::string& stylized_clean_path,
                                    const std::string& stylized_hazy_path,
                                    const PerceptualErrorBackend& backend) {
    return std::fabs(perceptual_error(clean_path, stylized_clean_path, backend) -
                     perceptual_error(clean_path, stylized_hazy_path, backend));
}

}  // namespace dilie
