#pragma once

#include <Eigen/Sparse>

#include "dilie/ad.hpp"
#include "dilie/image.hpp"

namespace dilie {

// Sparse symmetric PSD matrix from the local affine color model: its
// quadratic form is zero exactly for channels that are affine functions of
// the source image's RGB, so it penalizes recolorings that break local
// structure.
class MattingLaplacian {
public:
    MattingLaplacian(Eigen::SparseMatrix<double> m, int h, int w, int window_radius,
                     double eps_reg);

    int pixel_count() const { return h_ * w_; }
    int height() const { return h_; }
    int width() const { return w_; }
    int window_radius() const { return radius_; }
    double eps_reg() const { return eps_; }
    const Eigen::SparseMatrix<double>& matrix() const { return m_; }

    // L * v for one flattened channel.
    std::vector<double> multiply(const std::vector<double>& v) const;
    // v^T L v
    double quad_form(const std::vector<double>& v) const;

private:
    Eigen::SparseMatrix<double> m_;
    int h_, w_, radius_;
    double eps_;
};

MattingLaplacian matting_laplacian(const Image& img, int window_radius = 1,
                                   double eps_reg = 1e-7);

// sum over channels of V_c^T L V_c
double loss_affine(const MattingLaplacian& lap, const Image& istar);

// Tape node for the affine term; istar is a {3,H,W} variable.
ad::Var build_loss_affine(ad::Tape& t, const MattingLaplacian& lap, ad::Var istar);

}  // namespace dilie
