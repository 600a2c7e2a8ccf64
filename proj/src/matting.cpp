#include "dilie/matting.hpp"

#include <Eigen/Dense>

#include <vector>

#include "dilie/errors.hpp"

namespace dilie {

MattingLaplacian::MattingLaplacian(Eigen::SparseMatrix<double> m, int h, int w,
                                   int window_radius, double eps_reg)
    : m_(std::move(m)), h_(h), w_(w), radius_(window_radius), eps_(eps_reg) {}

std::vector<double> MattingLaplacian::multiply(const std::vector<double>& v) const {
    if (static_cast<int>(v.size()) != pixel_count())
        throw DimensionError("MattingLaplacian::multiply: vector length mismatch");
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
    Eigen::VectorXd y = m_ * x;
    return std::vector<double>(y.data(), y.data() + y.size());
}

double MattingLaplacian::quad_form(const std::vector<double>& v) const {
    if (static_cast<int>(v.size()) != pixel_count())
        throw DimensionError("MattingLaplacian::quad_form: vector length mismatch");
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
    return x.dot(m_ * x);
}

MattingLaplacian matting_laplacian(const Image& img, int window_radius, double eps_reg) {
    if (window_radius < 1) throw ArgumentError("matting_laplacian: window radius must be >= 1");
    if (eps_reg <= 0.0) throw ArgumentError("matting_laplacian: eps_reg must be positive");
    const int h = img.height(), w = img.width();
    const int side = 2 * window_radius + 1;
    if (h < side || w < side)
        throw ArgumentError("matting_laplacian: image smaller than the window");

    const int q = side * side;
    const int n = h * w;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>((h - side + 1) * (w - side + 1)) *
                  static_cast<std::size_t>(q) * q);

    std::vector<int> idx(static_cast<std::size_t>(q));
    std::vector<Eigen::Vector3d> px(static_cast<std::size_t>(q));
    std::vector<Eigen::Vector3d> whitened(static_cast<std::size_t>(q));

    for (int cy = window_radius; cy < h - window_radius; ++cy) {
        for (int cx = window_radius; cx < w - window_radius; ++cx) {
            int t = 0;
            Eigen::Vector3d mu = Eigen::Vector3d::Zero();
            for (int dy = -window_radius; dy <= window_radius; ++dy) {
                for (int dx = -window_radius; dx <= window_radius; ++dx) {
                    const int y = cy + dy, x = cx + dx;
                    idx[static_cast<std::size_t>(t)] = y * w + x;
                    Eigen::Vector3d v(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
                    px[static_cast<std::size_t>(t)] = v;
                    mu += v;
                    ++t;
                }
            }
            mu /= q;
            Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
            for (int i = 0; i < q; ++i) {
                const Eigen::Vector3d d = px[static_cast<std::size_t>(i)] - mu;
                cov += d * d.transpose();
            }
            cov /= q;

            // Whitened pixel coordinates so each window's affinity block is
            // an exact Gram matrix: rank-deficient covariances (flat or gray
            // windows) would otherwise wreck the inverse and break PSD.
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
            Eigen::Vector3d scale;
            for (int k = 0; k < 3; ++k)
                scale(k) = 1.0 / std::sqrt(std::max(es.eigenvalues()(k), 0.0) + eps_reg / q);
            for (int i = 0; i < q; ++i)
                whitened[static_cast<std::size_t>(i)] =
                    scale.asDiagonal() *
                    (es.eigenvectors().transpose() * (px[static_cast<std::size_t>(i)] - mu));

            for (int i = 0; i < q; ++i) {
                for (int j = 0; j < q; ++j) {
                    const double affinity =
                        (1.0 + whitened[static_cast<std::size_t>(i)].dot(
                                   whitened[static_cast<std::size_t>(j)])) / q;
                    double v = -affinity;
                    if (i == j) v += 1.0;
                    trips.emplace_back(idx[static_cast<std::size_t>(i)],
                                       idx[static_cast<std::size_t>(j)], v);
                }
            }
        }
    }

    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    return MattingLaplacian(std::move(m), h, w, window_radius, eps_reg);
}

double loss_affine(const MattingLaplacian& lap, const Image& istar) {
    if (istar.height() != lap.height() || istar.width() != lap.width())
        throw DimensionError("loss_affine: image size does not match the Laplacian");
    const std::size_t plane = static_cast<std::size_t>(lap.pixel_count());
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> v(istar.px.data() + c * plane, istar.px.data() + (c + 1) * plane);
        total += lap.quad_form(v);
    }
    return total;
}

ad::Var build_loss_affine(ad::Tape& t, const MattingLaplacian& lap, ad::Var istar) {
    const Tensor& v = t.value(istar);
    if (v.channels() != 3 || v.height() != lap.height() || v.width() != lap.width())
        throw DimensionError("loss_affine: image size does not match the Laplacian");
    const std::size_t plane = static_cast<std::size_t>(lap.pixel_count());
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> ch(v.data() + c * plane, v.data() + (c + 1) * plane);
        total += lap.quad_form(ch);
    }
    const MattingLaplacian* lp = &lap;  // caller keeps the Laplacian alive
    return t.custom(Tensor({1}, {total}), {istar}, [istar, lp, plane](ad::Tape& tt, ad::Var self) {
        if (!tt.wants_grad(istar)) return;
        const double g = tt.grad(self)[0];
        const Tensor& val = tt.value(istar);
        Tensor& gx = tt.grad_ref(istar);
        for (int c = 0; c < 3; ++c) {
            std::vector<double> ch(val.data() + c * plane, val.data() + (c + 1) * plane);
            std::vector<double> lv = lp->multiply(ch);
            double* dst = gx.data() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += 2.0 * g * lv[i];
        }
    });
}

}  // namespace dilie
