#pragma once

#include <cstdint>
#include <vector>

#include "dilie/ad.hpp"
#include "dilie/features.hpp"
#include "dilie/image.hpp"
#include "dilie/tensor.hpp"

namespace dilie {

struct LossWeights {
    double mu = 1.0;         // content coefficient
    double kappa = 1.0;      // style coefficient (photo runs default to 1e3)
    double lambda_cl = 1.0;  // contextual loss weight
    double cx_bandwidth = 0.5;
    double cx_epsilon = 1e-5;
    int remd_max_sites = 1024;  // hypercolumn subsample cap, <= 2048

    void validate() const;
};

// Target-side transformation for the reconstruction loss. Identity for
// denoising, area downsampling for super-resolution style uses.
struct Transform {
    enum class Kind { identity, downsample };
    Kind kind = Kind::identity;
    int factor = 1;

    Image apply(const Image& img) const;
};

// --- tape builders (single source of truth for all loss math) -------------

// mean((M*c + (1-M)*d - I)^2); mask is {1,H,W} and broadcasts over channels.
ad::Var build_loss_id(ad::Tape& t, ad::Var target, ad::Var out_c, ad::Var out_d,
                      ad::Var out_m);

// Contextual similarity of feature matrix F ({N,D}, rows = positions)
// against constant target features G ({M,D}). Both sides are centered by
// G's column mean; affinities use exp((1 - d/d_min)/h) row-normalized.
ad::Var build_cx(ad::Tape& t, ad::Var f, const Tensor& g, double bandwidth, double eps);

// -log CX(phi_C(img), phi_C(target)) averaged over content taps. `target_feats`
// are precomputed feature matrices per tap, position-major.
ad::Var build_loss_cl(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                      const std::vector<Tensor>& target_feats,
                      const std::vector<std::string>& taps, const LossWeights& w);

ad::Var build_loss_ir(ad::Tape& t, ad::Var out_r, ad::Var transformed_target);

ad::Var build_gram(ad::Tape& t, ad::Var feature_map);  // {C,Hl,Wl} -> {C,C}

// mean-squared feature difference over content taps (L_C) and mean-squared
// Gram difference over style taps (L_S); targets precomputed. The _from_vars
// forms reuse already-extracted tap variables so callers can share one
// extractor pass across several losses.
ad::Var build_loss_content(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                           const std::vector<Tensor>& target_maps,
                           const std::vector<std::string>& taps);
ad::Var build_loss_style(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                         const std::vector<Tensor>& target_grams,
                         const std::vector<std::string>& taps);
ad::Var build_content_from_vars(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                                const std::vector<Tensor>& target_maps);
ad::Var build_style_from_vars(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                              const std::vector<Tensor>& target_grams);

// REMD over unit-normalized rows: max of the two one-sided nearest-neighbor
// mean cosine costs.
ad::Var build_remd(ad::Tape& t, ad::Var f, const Tensor& g);

// Style-tap hypercolumns: taps upsampled to a common grid, concatenated per
// site, subsampled to at most max_sites rows (seeded, without replacement).
ad::Var build_hypercolumns(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                           const std::vector<int>& tap_scales, int max_sites,
                           std::uint64_t seed);
Tensor hypercolumns_const(const std::vector<Tensor>& tap_maps,
                          const std::vector<int>& tap_scales, int max_sites,
                          std::uint64_t seed);

// Flatten {C,H,W} feature map to a position-major {H*W, C} matrix.
Tensor feature_matrix(const Tensor& map);

// --- spec-facing scalar entry points ---------------------------------------

double loss_id(const Image& target, const Image& out_c, const Image& out_d,
               const TransmissionMap& out_m);
double cx_similarity(const Tensor& f, const Tensor& g, double bandwidth, double eps);
double loss_cl(const Image& target, const Image& out_c, const FeatureExtractor& ext,
               const LossWeights& w,
               const std::vector<std::string>& taps = content_taps());
double loss_ir(const Image& target, const Image& out_r, const Transform& transform);
Tensor gram_matrix(const Tensor& feature_map);
double loss_content(const Image& icfe, const Image& istar, const FeatureExtractor& ext,
                    const std::vector<std::string>& taps = content_taps());
double loss_style(const Image& style, const Image& istar, const FeatureExtractor& ext,
                  const std::vector<std::string>& taps = style_taps());
double remd_loss(const Tensor& f, const Tensor& g);

class MattingLaplacian;  // matting.hpp

// L_PE = L_m + mu*L_C + kappa*L_S (Gram style); L_AE = mu*L_C + kappa*L_S
// (REMD over hypercolumns).
double loss_pe(const MattingLaplacian& lap, const Image& icfe, const Image& style,
               const Image& istar, const FeatureExtractor& ext, const LossWeights& w,
               std::uint64_t seed = 0);
double loss_ae(const Image& icfe, const Image& style, const Image& istar,
               const FeatureExtractor& ext, const LossWeights& w, std::uint64_t seed = 0);

}  // namespace dilie
