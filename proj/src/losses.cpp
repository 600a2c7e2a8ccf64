#include "dilie/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dilie/errors.hpp"
#include "dilie/matting.hpp"
#include "dilie/rng.hpp"

namespace dilie {

namespace {

// Column means of {N,D}.
Tensor col_mean(const Tensor& m) {
    const int n = m.dim(0), d = m.dim(1);
    Tensor out({d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += m.at(i, j);
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] /= n;
    return out;
}

Tensor center_and_unit_rows(const Tensor& m, const Tensor& mu) {
    const int n = m.dim(0), d = m.dim(1);
    Tensor out = m;
    for (int i = 0; i < n; ++i) {
        double norm2 = 0.0;
        for (int j = 0; j < d; ++j) {
            out.at(i, j) -= mu[static_cast<std::size_t>(j)];
            norm2 += out.at(i, j) * out.at(i, j);
        }
        const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
        for (int j = 0; j < d; ++j) out.at(i, j) *= inv;
    }
    return out;
}

Tensor unit_rows_checked(const Tensor& m, const char* who) {
    const int n = m.dim(0), d = m.dim(1);
    Tensor out = m;
    for (int i = 0; i < n; ++i) {
        double norm2 = 0.0;
        for (int j = 0; j < d; ++j) norm2 += m.at(i, j) * m.at(i, j);
        if (norm2 <= 0.0)
            throw ArgumentError(std::string(who) + ": zero-norm feature vector at row " +
                                std::to_string(i));
        const double inv = 1.0 / std::sqrt(norm2);
        for (int j = 0; j < d; ++j) out.at(i, j) *= inv;
    }
    return out;
}

Tensor as_feature_matrix(const Tensor& t) {
    if (t.ndim() == 2) return t;
    if (t.ndim() == 3) return feature_matrix(t);
    throw ArgumentError("expected a {C,H,W} feature map or {N,D} feature matrix");
}

ad::Var mask_to_3ch(ad::Tape& t, ad::Var m) {
    return t.concat_ch(t.concat_ch(m, m), m);
}

ad::Var tap_average(ad::Tape& t, const std::vector<ad::Var>& terms) {
    ad::Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = t.add(acc, terms[i]);
    return t.affine(acc, 1.0 / double(terms.size()));
}

std::vector<int> sample_rows(int n, int k, std::uint64_t seed) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    if (k >= n) return idx;
    Rng rng(derive_seed(seed, 0x73697465ull));
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

int upsample_steps(int scale) {
    int k = 0;
    while ((1 << k) < scale) ++k;
    if ((1 << k) != scale)
        throw ArgumentError("hypercolumns: tap scale must be a power of two");
    return k;
}

}  // namespace

void LossWeights::validate() const {
    if (!(mu >= 0.0) || !(kappa >= 0.0) || !(lambda_cl >= 0.0) ||
        !std::isfinite(mu) || !std::isfinite(kappa) || !std::isfinite(lambda_cl))
        throw ArgumentError("LossWeights: mu/kappa/lambda_cl must be finite and >= 0");
    if (!(cx_bandwidth > 0.0) || cx_bandwidth > 1.0)
        throw ArgumentError("LossWeights: cx_bandwidth must be in (0, 1]");
    if (!(cx_epsilon > 0.0)) throw ArgumentError("LossWeights: cx_epsilon must be > 0");
    if (remd_max_sites < 1 || remd_max_sites > 2048)
        throw ArgumentError("LossWeights: remd_max_sites must be in [1, 2048]");
}

Image Transform::apply(const Image& img) const {
    if (kind == Kind::identity) return img;
    if (factor < 1) throw ArgumentError("Transform: downsample factor must be >= 1");
    const int h = img.height() / factor, w = img.width() / factor;
    if (h == 0 || w == 0) throw ArgumentError("Transform: image too small to downsample");
    Image out(h, w);
    const double inv = 1.0 / double(factor * factor);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += img.at(c, y * factor + dy, x * factor + dx);
                out.at(c, y, x) = s * inv;
            }
    return out;
}

Tensor feature_matrix(const Tensor& map) {
    const int c = map.channels(), hw = map.height() * map.width();
    Tensor out({hw, c});
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < hw; ++p)
            out.at(p, ci) = map[static_cast<std::size_t>(ci) * hw + p];
    return out;
}

// ---------------------------------------------------------------- builders

ad::Var build_loss_id(ad::Tape& t, ad::Var target, ad::Var out_c, ad::Var out_d,
                      ad::Var out_m) {
    const Tensor& vt = t.value(target);
    for (ad::Var v : {out_c, out_d}) {
        const Tensor& tv = t.value(v);
        if (tv.height() != vt.height() || tv.width() != vt.width())
            throw DimensionError("loss_id: layer output size differs from the input image");
    }
    const Tensor& mv = t.value(out_m);
    if (mv.height() != vt.height() || mv.width() != vt.width())
        throw DimensionError("loss_id: mask size differs from the input image");
    ad::Var m3 = mask_to_3ch(t, out_m);
    ad::Var comp = t.add(t.mul(m3, out_c), t.mul(t.affine(m3, -1.0, 1.0), out_d));
    return t.mean_sq_diff(comp, target);
}

ad::Var build_cx(ad::Tape& t, ad::Var f, const Tensor& g, double bandwidth, double eps) {
    if (!(bandwidth > 0.0) || !(eps > 0.0))
        throw ArgumentError("cx: bandwidth and eps must be positive");
    const Tensor& fv = t.value(f);
    if (fv.numel() == 0 || g.numel() == 0) throw ArgumentError("cx: empty feature map");
    if (fv.ndim() != 2 || g.ndim() != 2 || fv.dim(1) != g.dim(1))
        throw DimensionError("cx: feature matrices must share the channel dimension");

    const Tensor mu = col_mean(g);
    const Tensor gcn = center_and_unit_rows(g, mu);

    ad::Var fc = t.add_row_vector(f, t.leaf(mu), -1.0);
    ad::Var fn = t.row_unit(fc, 1e-12);
    ad::Var sim = t.matmul(fn, t.leaf(gcn), false, true);
    ad::Var dist = t.affine(sim, -1.0, 1.0);
    ad::Var dnorm = t.row_scale(dist, t.reciprocal(t.row_min(dist), eps));
    ad::Var w = t.exp(t.affine(dnorm, -1.0 / bandwidth, 1.0 / bandwidth));
    ad::Var affinities = t.row_scale(w, t.reciprocal(t.row_sum(w), 0.0));
    return t.mean(t.row_max(affinities));
}

ad::Var build_loss_cl(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                      const std::vector<Tensor>& target_feats,
                      const std::vector<std::string>& taps, const LossWeights& w) {
    auto tap_vars = ext.on_tape(t, img, taps);
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < tap_vars.size(); ++i) {
        const Tensor& map = t.value(tap_vars[i].second);
        ad::Var fmat = t.transpose(
            t.reshape(tap_vars[i].second, {map.channels(), map.height() * map.width()}));
        ad::Var cx = build_cx(t, fmat, target_feats[i], w.cx_bandwidth, w.cx_epsilon);
        terms.push_back(t.affine(t.log(cx), -1.0));
    }
    return tap_average(t, terms);
}

ad::Var build_loss_ir(ad::Tape& t, ad::Var out_r, ad::Var transformed_target) {
    if (!t.value(out_r).same_shape(t.value(transformed_target)))
        throw DimensionError("loss_ir: output shape differs from the transformed target");
    return t.mean_sq_diff(out_r, transformed_target);
}

ad::Var build_gram(ad::Tape& t, ad::Var feature_map) {
    const Tensor& v = t.value(feature_map);
    if (v.numel() == 0) throw ArgumentError("gram_matrix: empty feature map");
    const int c = v.channels(), hw = v.height() * v.width();
    ad::Var flat = t.reshape(feature_map, {c, hw});
    return t.affine(t.matmul(flat, flat, false, true), 1.0 / (double(c) * hw));
}

ad::Var build_content_from_vars(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                                const std::vector<Tensor>& target_maps) {
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < tap_vars.size(); ++i)
        terms.push_back(t.mean_sq_diff(tap_vars[i], t.leaf(target_maps[i])));
    return tap_average(t, terms);
}

ad::Var build_style_from_vars(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                              const std::vector<Tensor>& target_grams) {
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < tap_vars.size(); ++i) {
        ad::Var g = build_gram(t, tap_vars[i]);
        terms.push_back(t.mean_sq_diff(g, t.leaf(target_grams[i])));
    }
    return tap_average(t, terms);
}

ad::Var build_loss_content(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                           const std::vector<Tensor>& target_maps,
                           const std::vector<std::string>& taps) {
    auto tap_vars = ext.on_tape(t, img, taps);
    std::vector<ad::Var> vars;
    for (auto& [n, v] : tap_vars) vars.push_back(v);
    return build_content_from_vars(t, vars, target_maps);
}

ad::Var build_loss_style(ad::Tape& t, const FeatureExtractor& ext, ad::Var img,
                         const std::vector<Tensor>& target_grams,
                         const std::vector<std::string>& taps) {
    auto tap_vars = ext.on_tape(t, img, taps);
    std::vector<ad::Var> vars;
    for (auto& [n, v] : tap_vars) vars.push_back(v);
    return build_style_from_vars(t, vars, target_grams);
}

ad::Var build_remd(ad::Tape& t, ad::Var f, const Tensor& g) {
    const Tensor& fv = t.value(f);
    if (fv.dim(0) < 1 || g.dim(0) < 1) throw ArgumentError("remd: empty feature set");
    if (fv.dim(1) != g.dim(1))
        throw DimensionError("remd: feature dimensions differ");
    for (int i = 0; i < fv.dim(0); ++i) {
        double n2 = 0.0;
        for (int j = 0; j < fv.dim(1); ++j) n2 += fv.at(i, j) * fv.at(i, j);
        if (n2 <= 0.0) throw ArgumentError("remd: zero-norm feature vector (cosine undefined)");
    }
    const Tensor gn = unit_rows_checked(g, "remd");
    ad::Var fn = t.row_unit(f, 1e-12);
    ad::Var cost = t.affine(t.matmul(fn, t.leaf(gn), false, true), -1.0, 1.0);
    ad::Var fwd = t.mean(t.row_min(cost));
    ad::Var bwd = t.mean(t.col_min(cost));
    return t.max_of(fwd, bwd);
}

ad::Var build_hypercolumns(ad::Tape& t, const std::vector<ad::Var>& tap_vars,
                           const std::vector<int>& tap_scales, int max_sites,
                           std::uint64_t seed) {
    if (tap_vars.empty()) throw ArgumentError("hypercolumns: no taps");
    std::vector<ad::Var> upsampled;
    int common_h = 1 << 30, common_w = 1 << 30;
    for (std::size_t i = 0; i < tap_vars.size(); ++i) {
        ad::Var v = tap_vars[i];
        for (int s = 0; s < upsample_steps(tap_scales[i]); ++s)
            v = t.upsample_bilinear2(v);
        common_h = std::min(common_h, t.value(v).height());
        common_w = std::min(common_w, t.value(v).width());
        upsampled.push_back(v);
    }
    ad::Var stack;
    for (std::size_t i = 0; i < upsampled.size(); ++i) {
        ad::Var v = upsampled[i];
        if (t.value(v).height() != common_h || t.value(v).width() != common_w)
            v = t.crop2d(v, common_h, common_w);
        stack = (i == 0) ? v : t.concat_ch(stack, v);
    }
    const Tensor& sv = t.value(stack);
    ad::Var mat = t.transpose(t.reshape(stack, {sv.channels(), common_h * common_w}));
    const int n = common_h * common_w;
    if (n > max_sites) mat = t.gather_rows(mat, sample_rows(n, max_sites, seed));
    return mat;
}

Tensor hypercolumns_const(const std::vector<Tensor>& tap_maps,
                          const std::vector<int>& tap_scales, int max_sites,
                          std::uint64_t seed) {
    ad::Tape t;
    std::vector<ad::Var> vars;
    for (const Tensor& m : tap_maps) vars.push_back(t.leaf(m, false));
    return t.value(build_hypercolumns(t, vars, tap_scales, max_sites, seed));
}

// ------------------------------------------------------- scalar entry points

double loss_id(const Image& target, const Image& out_c, const Image& out_d,
               const TransmissionMap& out_m) {
    ad::Tape t;
    return t.value(build_loss_id(t, t.leaf(target.px), t.leaf(out_c.px), t.leaf(out_d.px),
                                 t.leaf(out_m.values)))[0];
}

double cx_similarity(const Tensor& f, const Tensor& g, double bandwidth, double eps) {
    ad::Tape t;
    return t.value(build_cx(t, t.leaf(as_feature_matrix(f)), as_feature_matrix(g),
                            bandwidth, eps))[0];
}

double loss_cl(const Image& target, const Image& out_c, const FeatureExtractor& ext,
               const LossWeights& w, const std::vector<std::string>& taps) {
    if (!target.px.same_shape(out_c.px))
        throw DimensionError("loss_cl: images differ in shape");
    FeatureStack tf = extract(ext, target, taps);
    std::vector<Tensor> target_feats;
    for (const auto& [name, map] : tf.maps) target_feats.push_back(feature_matrix(map));
    ad::Tape t;
    return t.value(build_loss_cl(t, ext, t.leaf(out_c.px), target_feats, taps, w))[0];
}

double loss_ir(const Image& target, const Image& out_r, const Transform& transform) {
    const Image transformed = transform.apply(target);
    ad::Tape t;
    return t.value(build_loss_ir(t, t.leaf(out_r.px), t.leaf(transformed.px)))[0];
}

Tensor gram_matrix(const Tensor& feature_map) {
    ad::Tape t;
    return t.value(build_gram(t, t.leaf(feature_map)));
}

double loss_content(const Image& icfe, const Image& istar, const FeatureExtractor& ext,
                    const std::vector<std::string>& taps) {
    FeatureStack tf = extract(ext, icfe, taps);
    std::vector<Tensor> maps;
    for (const auto& [name, map] : tf.maps) maps.push_back(map);
    ad::Tape t;
    return t.value(build_loss_content(t, ext, t.leaf(istar.px), maps, taps))[0];
}

double loss_style(const Image& style, const Image& istar, const FeatureExtractor& ext,
                  const std::vector<std::string>& taps) {
    FeatureStack tf = extract(ext, style, taps);
    std::vector<Tensor> grams;
    for (const auto& [name, map] : tf.maps) grams.push_back(gram_matrix(map));
    ad::Tape t;
    return t.value(build_loss_style(t, ext, t.leaf(istar.px), grams, taps))[0];
}

double remd_loss(const Tensor& f, const Tensor& g) {
    ad::Tape t;
    return t.value(build_remd(t, t.leaf(as_feature_matrix(f)), as_feature_matrix(g)))[0];
}

double loss_pe(const MattingLaplacian& lap, const Image& icfe, const Image& style,
               const Image& istar, const FeatureExtractor& ext, const LossWeights& w,
               std::uint64_t seed) {
    (void)seed;
    w.validate();
    return loss_affine(lap, istar) + w.mu * loss_content(icfe, istar, ext) +
           w.kappa * loss_style(style, istar, ext);
}

double loss_ae(const Image& icfe, const Image& style, const Image& istar,
               const FeatureExtractor& ext, const LossWeights& w, std::uint64_t seed) {
    w.validate();
    const auto taps = style_taps();
    std::vector<int> scales = {1, 2, 4};
    FeatureStack sf = extract(ext, style, taps);
    FeatureStack xf = extract(ext, istar, taps);
    std::vector<Tensor> smaps, xmaps;
    for (const auto& [n, m] : sf.maps) smaps.push_back(m);
    for (const auto& [n, m] : xf.maps) xmaps.push_back(m);
    const Tensor sh = hypercolumns_const(smaps, scales, w.remd_max_sites, seed);
    const Tensor xh = hypercolumns_const(xmaps, scales, w.remd_max_sites, seed);
    return w.mu * loss_content(icfe, istar, ext) + w.kappa * remd_loss(xh, sh);
}

}  // namespace dilie
