#pragma once

#include <vector>

#include "dilie/generators.hpp"
#include "dilie/image.hpp"
#include "dilie/tensor.hpp"

// Independent brute-force recomputations used as oracles. Everything here is
// written from the documented formulas with plain loops, no shared code with
// the implementations under test.
namespace dilie::oracles {

// Contextual similarity on {N,D} x {M,D} position-major feature matrices.
double cx_brute(const Tensor& f, const Tensor& g, double bandwidth, double eps);

// Relaxed EMD via exhaustive pairwise cosine costs.
double remd_brute(const Tensor& f, const Tensor& g);

// Gram matrix by explicit summation.
Tensor gram_brute(const Tensor& map);

// SSIM with direct per-window evaluation (no separable filtering).
double ssim_brute(const Image& a, const Image& b);

// Dense Matting Laplacian (N x N, row-major) from the local affine model.
std::vector<double> matting_dense(const Image& img, int radius, double eps_reg);

double quad_form_dense(const std::vector<double>& m, const std::vector<double>& v);

// Closed-form parameter count from the documented hourglass architecture.
std::size_t generator_param_count(const GeneratorSpec& spec);

// Mean absolute 4-neighbor Laplacian of a {C,H,W} tensor.
double mean_abs_laplacian(const Tensor& t);

}  // namespace dilie::oracles
