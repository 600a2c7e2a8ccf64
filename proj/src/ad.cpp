#include "dilie/ad.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace dilie::ad {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": operand shapes differ");
}

// C[m,n] (+)= alpha * op(A) * op(B)
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
          const double* b, double beta, double* c) {
    const int lda = ta ? m : k;
    const int ldb = tb ? k : n;
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, n);
}

struct ConvDims {
    int cin, h, w, cout, kh, kw, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4)
        throw std::invalid_argument("conv2d: x must be {C,H,W}, w must be {Cout,Cin,kh,kw}");
    ConvDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (w.dim(1) != d.cin)
        throw std::invalid_argument("conv2d: input channels do not match kernel");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: empty output");
    return d;
}

void im2col(const double* x, const ConvDims& d, double* col) {
    const int hw = d.ho * d.wo;
    for (int ci = 0; ci < d.cin; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                double* row = col + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                                     ky * d.kw + kx) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) {
                        std::memset(row + static_cast<std::size_t>(oy) * d.wo, 0,
                                    sizeof(double) * static_cast<std::size_t>(d.wo));
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * d.w;
                    double* dst = row + static_cast<std::size_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const double* col, const ConvDims& d, double* dx) {
    const int hw = d.ho * d.wo;
    for (int ci = 0; ci < d.cin; ++ci) {
        double* plane = dx + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* row = col + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                                           ky * d.kw + kx) * hw;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * d.w;
                    const double* src = row + static_cast<std::size_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Axis tables for x2 bilinear upsampling (align_corners = false).
void bilinear_axis(int in, std::vector<int>& i0, std::vector<int>& i1,
                   std::vector<double>& frac) {
    const int out = in * 2;
    i0.resize(out);
    i1.resize(out);
    frac.resize(out);
    for (int o = 0; o < out; ++o) {
        double s = (o + 0.5) / 2.0 - 0.5;
        s = std::min(double(in - 1), std::max(0.0, s));
        const int lo = static_cast<int>(std::floor(s));
        i0[o] = lo;
        i1[o] = std::min(lo + 1, in - 1);
        frac[o] = s - lo;
    }
}

}  // namespace

Tape::Tape() { nodes_.reserve(256); }

Var Tape::push(Tensor value, bool rg, std::function<void(Tape&, Var)> back) {
    Node n;
    n.val = std::move(value);
    n.rg = rg;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

Tensor& Tape::grad_ref(Var v) {
    Node& n = node(v);
    if (!n.grad_alloc) {
        n.grd = Tensor::zeros(n.val.dims());
        n.grad_alloc = true;
    }
    return n.grd;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_alloc) throw std::logic_error("gradient was never accumulated for this node");
    return n.grd;
}

void Tape::backward(Var root) {
    if (node(root).val.numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    grad_ref(root)[0] = 1.0;
    for (int i = root.i; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.rg && n.grad_alloc && n.back) n.back(*this, Var{i});
    }
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return push(std::move(out), wants_grad(a) || wants_grad(b), [a, b](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        for (Var p : {a, b}) {
            if (!t.wants_grad(p)) continue;
            Tensor& gp = t.grad_ref(p);
            for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return push(std::move(out), wants_grad(a) || wants_grad(b), [a, b](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        if (t.wants_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return push(std::move(out), wants_grad(a) || wants_grad(b), [a, b](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        if (t.wants_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            const Tensor& vb = t.value(b);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            const Tensor& va = t.value(a);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

Var Tape::affine(Var a, double scale, double shift) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * scale + shift;
    return push(std::move(out), wants_grad(a), [a, scale](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * scale;
    });
}

Var Tape::exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = std::exp(v);
    return push(std::move(out), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    });
}

Var Tape::log(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = std::log(v);
    return push(std::move(out), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i];
    });
}

Var Tape::reciprocal(Var a, double eps) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = 1.0 / (v + eps);
    return push(std::move(out), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] -= g[i] * y[i] * y[i];
    });
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::leaky_relu(Var a, double slope) {
    Tensor out = value(a);
    for (double& v : out.vec())
        if (v < 0.0) v *= slope;
    return push(std::move(out), wants_grad(a), [a, slope](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i)
            ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
    });
}

Var Tape::sigmoid(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(out), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

// ---------------------------------------------------------------- reductions

Var Tape::sum(Var a) {
    double s = 0.0;
    for (double v : value(a).vec()) s += v;
    return push(Tensor({1}, {s}), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const double g = t.grad(self)[0];
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

Var Tape::mean(Var a) {
    const double n = double(value(a).numel());
    double s = 0.0;
    for (double v : value(a).vec()) s += v;
    return push(Tensor({1}, {s / n}), wants_grad(a), [a, n](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const double g = t.grad(self)[0] / n;
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

Var Tape::mean_sq_diff(Var a, Var b) {
    check_same_shape(value(a), value(b), "mean_sq_diff");
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const double n = double(va.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < va.numel(); ++i) {
        const double d = va[i] - vb[i];
        s += d * d;
    }
    return push(Tensor({1}, {s / n}), wants_grad(a) || wants_grad(b),
                [a, b, n](Tape& t, Var self) {
        const double g = 2.0 * t.grad(self)[0] / n;
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        if (t.wants_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < va.numel(); ++i) ga[i] += g * (va[i] - vb[i]);
        }
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < va.numel(); ++i) gb[i] -= g * (va[i] - vb[i]);
        }
    });
}

Var Tape::row_sum(Var x) {
    const Tensor& v = value(x);
    const int n = v.dim(0), m = v.dim(1);
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += v.at(i, j);
        out[static_cast<std::size_t>(i)] = s;
    }
    return push(std::move(out), wants_grad(x), [x, n, m](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) gx.at(i, j) += g[static_cast<std::size_t>(i)];
    });
}

namespace {
Tensor arg_reduce_rows(const Tensor& v, bool take_min, std::vector<int>& arg) {
    const int n = v.dim(0), m = v.dim(1);
    Tensor out({n});
    arg.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double bv = v.at(i, 0);
        for (int j = 1; j < m; ++j) {
            const double c = v.at(i, j);
            if (take_min ? (c < bv) : (c > bv)) {
                bv = c;
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = bv;
        arg[static_cast<std::size_t>(i)] = best;
    }
    return out;
}
}  // namespace

Var Tape::row_min(Var x) {
    auto arg = std::make_shared<std::vector<int>>();
    Tensor out = arg_reduce_rows(value(x), true, *arg);
    return push(std::move(out), wants_grad(x), [x, arg](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (std::size_t i = 0; i < arg->size(); ++i)
            gx.at(static_cast<int>(i), (*arg)[i]) += g[i];
    });
}

Var Tape::row_max(Var x) {
    auto arg = std::make_shared<std::vector<int>>();
    Tensor out = arg_reduce_rows(value(x), false, *arg);
    return push(std::move(out), wants_grad(x), [x, arg](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (std::size_t i = 0; i < arg->size(); ++i)
            gx.at(static_cast<int>(i), (*arg)[i]) += g[i];
    });
}

Var Tape::col_min(Var x) {
    const Tensor& v = value(x);
    const int n = v.dim(0), m = v.dim(1);
    Tensor out({m});
    auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        int best = 0;
        double bv = v.at(0, j);
        for (int i = 1; i < n; ++i) {
            const double c = v.at(i, j);
            if (c < bv) {
                bv = c;
                best = i;
            }
        }
        out[static_cast<std::size_t>(j)] = bv;
        (*arg)[static_cast<std::size_t>(j)] = best;
    }
    return push(std::move(out), wants_grad(x), [x, arg](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (std::size_t j = 0; j < arg->size(); ++j)
            gx.at((*arg)[j], static_cast<int>(j)) += g[j];
    });
}

Var Tape::max_of(Var a, Var b) {
    const double va = value(a)[0], vb = value(b)[0];
    const bool pick_a = va >= vb;
    return push(Tensor({1}, {pick_a ? va : vb}), wants_grad(a) || wants_grad(b),
                [a, b, pick_a](Tape& t, Var self) {
        const Var p = pick_a ? a : b;
        if (!t.wants_grad(p)) return;
        t.grad_ref(p)[0] += t.grad(self)[0];
    });
}

// --------------------------------------------------------------------- shape

Var Tape::reshape(Var a, std::vector<int> dims) {
    if (count_elements(dims) != value(a).numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(dims), value(a).vec());
    return push(std::move(out), wants_grad(a), [a](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
}

Var Tape::transpose(Var x) {
    const Tensor& v = value(x);
    const int n = v.dim(0), m = v.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(j, i) = v.at(i, j);
    return push(std::move(out), wants_grad(x), [x, n, m](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) gx.at(i, j) += g.at(j, i);
    });
}

Var Tape::concat_ch(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.height() != vb.height() || va.width() != vb.width())
        throw std::invalid_argument("concat_ch: spatial sizes differ");
    Tensor out({va.channels() + vb.channels(), va.height(), va.width()});
    std::memcpy(out.data(), va.data(), sizeof(double) * va.numel());
    std::memcpy(out.data() + va.numel(), vb.data(), sizeof(double) * vb.numel());
    const std::size_t na = va.numel();
    return push(std::move(out), wants_grad(a) || wants_grad(b),
                [a, b, na](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        if (t.wants_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (std::size_t i = 0; i < g.numel() - na; ++i) gb[i] += g[na + i];
        }
    });
}

Var Tape::crop2d(Var a, int h, int w) {
    const Tensor& v = value(a);
    if (h > v.height() || w > v.width())
        throw std::invalid_argument("crop2d: crop larger than input");
    const int c = v.channels();
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ci, y, x) = v.at(ci, y, x);
    return push(std::move(out), wants_grad(a), [a, c, h, w](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_ref(a);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) ga.at(ci, y, x) += g.at(ci, y, x);
    });
}

Var Tape::pad2d_replicate(Var a, int bottom, int right) {
    const Tensor& v = value(a);
    const int c = v.channels(), h = v.height(), w = v.width();
    Tensor out({c, h + bottom, w + right});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h + bottom; ++y)
            for (int x = 0; x < w + right; ++x)
                out.at(ci, y, x) = v.at(ci, std::min(y, h - 1), std::min(x, w - 1));
    return push(std::move(out), wants_grad(a), [a, c, h, w, bottom, right](Tape& t, Var self) {
        if (!t.wants_grad(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_ref(a);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h + bottom; ++y)
                for (int x = 0; x < w + right; ++x)
                    ga.at(ci, std::min(y, h - 1), std::min(x, w - 1)) += g.at(ci, y, x);
    });
}

Var Tape::broadcast_chw(Var v, int h, int w) {
    const Tensor& src = value(v);
    const int c = src.dim(0);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h * w; ++i)
            out[static_cast<std::size_t>(ci) * h * w + i] = src[static_cast<std::size_t>(ci)];
    return push(std::move(out), wants_grad(v), [v, c, h, w](Tape& t, Var self) {
        if (!t.wants_grad(v)) return;
        const Tensor& g = t.grad(self);
        Tensor& gv = t.grad_ref(v);
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += g[static_cast<std::size_t>(ci) * h * w + i];
            gv[static_cast<std::size_t>(ci)] += s;
        }
    });
}

// ------------------------------------------------------------ linear algebra

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2)
        throw std::invalid_argument("matmul: operands must be matrices");
    const int m = trans_a ? va.dim(1) : va.dim(0);
    const int k = trans_a ? va.dim(0) : va.dim(1);
    const int kb = trans_b ? vb.dim(1) : vb.dim(0);
    const int n = trans_b ? vb.dim(0) : vb.dim(1);
    if (k != kb) throw std::invalid_argument("matmul: inner dimensions differ");
    Tensor out({m, n});
    gemm(trans_a, trans_b, m, n, k, 1.0, va.data(), vb.data(), 0.0, out.data());
    return push(std::move(out), wants_grad(a) || wants_grad(b),
                [a, b, trans_a, trans_b, m, n, k](Tape& t, Var self) {
        const Tensor& g = t.grad(self);  // {m, n}
        const Tensor& va = t.value(a);
        const Tensor& vb = t.value(b);
        if (t.wants_grad(a)) {
            Tensor& ga = t.grad_ref(a);
            if (!trans_a)  // dA += G * op(B)^T  -> {m, k}
                gemm(false, !trans_b, m, k, n, 1.0, g.data(), vb.data(), 1.0, ga.data());
            else  // dA += op(B) * G^T -> {k, m}
                gemm(trans_b, true, k, m, n, 1.0, vb.data(), g.data(), 1.0, ga.data());
        }
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            if (!trans_b)  // dB += op(A)^T * G -> {k, n}
                gemm(!trans_a, false, k, n, m, 1.0, va.data(), g.data(), 1.0, gb.data());
            else  // dB += G^T * op(A) -> {n, k}
                gemm(true, trans_a, n, k, m, 1.0, g.data(), va.data(), 1.0, gb.data());
        }
    });
}

Var Tape::row_scale(Var x, Var s) {
    const Tensor& vx = value(x);
    const Tensor& vs = value(s);
    const int n = vx.dim(0), m = vx.dim(1);
    if (vs.numel() != static_cast<std::size_t>(n))
        throw std::invalid_argument("row_scale: scale length must equal row count");
    Tensor out = vx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) *= vs[static_cast<std::size_t>(i)];
    return push(std::move(out), wants_grad(x) || wants_grad(s),
                [x, s, n, m](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& vx = t.value(x);
        const Tensor& vs = t.value(s);
        if (t.wants_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j)
                    gx.at(i, j) += g.at(i, j) * vs[static_cast<std::size_t>(i)];
        }
        if (t.wants_grad(s)) {
            Tensor& gs = t.grad_ref(s);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int j = 0; j < m; ++j) acc += g.at(i, j) * vx.at(i, j);
                gs[static_cast<std::size_t>(i)] += acc;
            }
        }
    });
}

Var Tape::add_row_vector(Var x, Var v, double alpha) {
    const Tensor& vx = value(x);
    const Tensor& vv = value(v);
    const int n = vx.dim(0), m = vx.dim(1);
    if (vv.numel() != static_cast<std::size_t>(m))
        throw std::invalid_argument("add_row_vector: vector length must equal column count");
    Tensor out = vx;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) += alpha * vv[static_cast<std::size_t>(j)];
    return push(std::move(out), wants_grad(x) || wants_grad(v),
                [x, v, alpha, n, m](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        if (t.wants_grad(x)) {
            Tensor& gx = t.grad_ref(x);
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (t.wants_grad(v)) {
            Tensor& gv = t.grad_ref(v);
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) acc += g.at(i, j);
                gv[static_cast<std::size_t>(j)] += alpha * acc;
            }
        }
    });
}

Var Tape::row_unit(Var x, double eps) {
    const Tensor& vx = value(x);
    const int n = vx.dim(0), m = vx.dim(1);
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    Tensor out = vx;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += vx.at(i, j) * vx.at(i, j);
        const double norm = std::sqrt(s);
        (*norms)[static_cast<std::size_t>(i)] = norm;
        const double inv = 1.0 / std::max(norm, eps);
        for (int j = 0; j < m; ++j) out.at(i, j) *= inv;
    }
    return push(std::move(out), wants_grad(x), [x, eps, n, m, norms](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& gx = t.grad_ref(x);
        for (int i = 0; i < n; ++i) {
            const double norm = (*norms)[static_cast<std::size_t>(i)];
            if (norm <= eps) {
                for (int j = 0; j < m; ++j) gx.at(i, j) += g.at(i, j) / eps;
                continue;
            }
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += g.at(i, j) * y.at(i, j);
            for (int j = 0; j < m; ++j)
                gx.at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / norm;
        }
    });
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
    const Tensor& vx = value(x);
    const int n = vx.dim(0), m = vx.dim(1);
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    Tensor out({static_cast<int>(idx->size()), m});
    for (std::size_t r = 0; r < idx->size(); ++r) {
        const int src = (*idx)[r];
        if (src < 0 || src >= n) throw std::invalid_argument("gather_rows: index out of range");
        std::memcpy(out.data() + r * static_cast<std::size_t>(m),
                    vx.data() + static_cast<std::size_t>(src) * m,
                    sizeof(double) * static_cast<std::size_t>(m));
    }
    return push(std::move(out), wants_grad(x), [x, idx, m](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (std::size_t r = 0; r < idx->size(); ++r) {
            double* dst = gx.data() + static_cast<std::size_t>((*idx)[r]) * m;
            const double* src = g.data() + r * static_cast<std::size_t>(m);
            for (int j = 0; j < m; ++j) dst[j] += src[j];
        }
    });
}

// ----------------------------------------------------------------- nn blocks

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const ConvDims d = conv_dims(vx, vw, stride, pad);
    if (value(b).numel() != static_cast<std::size_t>(d.cout))
        throw std::invalid_argument("conv2d: bias length must equal output channels");

    const int kdim = d.cin * d.kh * d.kw;
    const int hw = d.ho * d.wo;
    auto col = std::make_shared<Tensor>(std::vector<int>{kdim, hw});
    im2col(vx.data(), d, col->data());

    Tensor out({d.cout, d.ho, d.wo});
    gemm(false, false, d.cout, hw, kdim, 1.0, vw.data(), col->data(), 0.0, out.data());
    const Tensor& vb = value(b);
    for (int co = 0; co < d.cout; ++co) {
        double* plane = out.data() + static_cast<std::size_t>(co) * hw;
        const double bias = vb[static_cast<std::size_t>(co)];
        for (int i = 0; i < hw; ++i) plane[i] += bias;
    }

    // The im2col buffer is only needed again for dW.
    if (!wants_grad(w)) col.reset();

    return push(std::move(out), wants_grad(x) || wants_grad(w) || wants_grad(b),
                [x, w, b, d, kdim, hw, col](Tape& t, Var self) {
        const Tensor& g = t.grad(self);  // {cout, ho, wo}
        if (t.wants_grad(b)) {
            Tensor& gb = t.grad_ref(b);
            for (int co = 0; co < d.cout; ++co) {
                double s = 0.0;
                const double* plane = g.data() + static_cast<std::size_t>(co) * hw;
                for (int i = 0; i < hw; ++i) s += plane[i];
                gb[static_cast<std::size_t>(co)] += s;
            }
        }
        if (t.wants_grad(w)) {
            Tensor& gw = t.grad_ref(w);
            gemm(false, true, d.cout, kdim, hw, 1.0, g.data(), col->data(), 1.0, gw.data());
        }
        if (t.wants_grad(x)) {
            Tensor dcol({kdim, hw});
            gemm(true, false, kdim, hw, d.cout, 1.0, t.value(w).data(), g.data(), 0.0,
                 dcol.data());
            col2im_accumulate(dcol.data(), d, t.grad_ref(x).data());
        }
    });
}

Var Tape::maxpool2(Var x) {
    const Tensor& v = value(x);
    const int c = v.channels(), h = v.height(), w = v.width();
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("maxpool2: input too small");
    Tensor out({c, ho, wo});
    auto arg = std::make_shared<std::vector<int>>(out.numel());
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = v.data() + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                int best = (2 * oy) * w + 2 * ox;
                double bv = plane[best];
                const int cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                                     (2 * oy + 1) * w + 2 * ox + 1};
                for (int idx : cand) {
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(ci) * ho + oy) * wo + ox;
                out[o] = bv;
                (*arg)[o] = best;
            }
        }
    }
    return push(std::move(out), wants_grad(x), [x, arg, h, w, ho, wo](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
        const std::size_t plane_in = static_cast<std::size_t>(h) * w;
        for (std::size_t o = 0; o < g.numel(); ++o) {
            const std::size_t ci = o / plane_out;
            gx.vec()[ci * plane_in + static_cast<std::size_t>((*arg)[o])] += g[o];
        }
    });
}

Var Tape::upsample_bilinear2(Var x) {
    const Tensor& v = value(x);
    const int c = v.channels(), h = v.height(), w = v.width();
    std::vector<int> y0, y1, x0, x1;
    std::vector<double> fy, fx;
    bilinear_axis(h, y0, y1, fy);
    bilinear_axis(w, x0, x1, fx);
    Tensor out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci) {
        const double* in = v.data() + static_cast<std::size_t>(ci) * h * w;
        double* o = out.data() + static_cast<std::size_t>(ci) * 4 * h * w;
        for (int oy = 0; oy < 2 * h; ++oy) {
            const double wy = fy[static_cast<std::size_t>(oy)];
            const double* r0 = in + static_cast<std::size_t>(y0[static_cast<std::size_t>(oy)]) * w;
            const double* r1 = in + static_cast<std::size_t>(y1[static_cast<std::size_t>(oy)]) * w;
            double* orow = o + static_cast<std::size_t>(oy) * 2 * w;
            for (int ox = 0; ox < 2 * w; ++ox) {
                const double wx = fx[static_cast<std::size_t>(ox)];
                const int a = x0[static_cast<std::size_t>(ox)], bx = x1[static_cast<std::size_t>(ox)];
                orow[ox] = (1 - wy) * ((1 - wx) * r0[a] + wx * r0[bx]) +
                           wy * ((1 - wx) * r1[a] + wx * r1[bx]);
            }
        }
    }
    return push(std::move(out), wants_grad(x), [x, c, h, w](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        std::vector<int> y0, y1, x0, x1;
        std::vector<double> fy, fx;
        bilinear_axis(h, y0, y1, fy);
        bilinear_axis(w, x0, x1, fx);
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (int ci = 0; ci < c; ++ci) {
            double* gi = gx.data() + static_cast<std::size_t>(ci) * h * w;
            const double* go = g.data() + static_cast<std::size_t>(ci) * 4 * h * w;
            for (int oy = 0; oy < 2 * h; ++oy) {
                const double wy = fy[static_cast<std::size_t>(oy)];
                const int ya = y0[static_cast<std::size_t>(oy)], yb = y1[static_cast<std::size_t>(oy)];
                const double* grow = go + static_cast<std::size_t>(oy) * 2 * w;
                for (int ox = 0; ox < 2 * w; ++ox) {
                    const double wx = fx[static_cast<std::size_t>(ox)];
                    const int xa = x0[static_cast<std::size_t>(ox)], xb = x1[static_cast<std::size_t>(ox)];
                    const double gv = grow[ox];
                    gi[ya * w + xa] += (1 - wy) * (1 - wx) * gv;
                    gi[ya * w + xb] += (1 - wy) * wx * gv;
                    gi[yb * w + xa] += wy * (1 - wx) * gv;
                    gi[yb * w + xb] += wy * wx * gv;
                }
            }
        }
    });
}

Var Tape::area_downsample(Var x, int factor) {
    if (factor < 1) throw std::invalid_argument("area_downsample: factor must be >= 1");
    if (factor == 1) return x;
    const Tensor& v = value(x);
    const int c = v.channels(), h = v.height(), w = v.width();
    const int ho = h / factor, wo = w / factor;
    if (ho == 0 || wo == 0) throw std::invalid_argument("area_downsample: input too small");
    const double inv = 1.0 / double(factor * factor);
    Tensor out({c, ho, wo});
    for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double s = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += v.at(ci, oy * factor + dy, ox * factor + dx);
                out.at(ci, oy, ox) = s * inv;
            }
    return push(std::move(out), wants_grad(x), [x, c, ho, wo, factor, inv](Tape& t, Var self) {
        if (!t.wants_grad(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_ref(x);
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const double gv = g.at(ci, oy, ox) * inv;
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            gx.at(ci, oy * factor + dy, ox * factor + dx) += gv;
                }
    });
}

Var Tape::instance_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& v = value(x);
    const int c = v.channels(), h = v.height(), w = v.width();
    const int hw = h * w;
    if (value(gain).numel() != static_cast<std::size_t>(c) ||
        value(bias).numel() != static_cast<std::size_t>(c))
        throw std::invalid_argument("instance_norm: gain/bias length must equal channels");
    auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    auto istd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    Tensor out({c, h, w});
    const Tensor& vg = value(gain);
    const Tensor& vb = value(bias);
    for (int ci = 0; ci < c; ++ci) {
        const double* in = v.data() + static_cast<std::size_t>(ci) * hw;
        double m = 0.0;
        for (int i = 0; i < hw; ++i) m += in[i];
        m /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) {
            const double d = in[i] - m;
            var += d * d;
        }
        var /= hw;
        const double is = 1.0 / std::sqrt(var + eps);
        (*mu)[static_cast<std::size_t>(ci)] = m;
        (*istd)[static_cast<std::size_t>(ci)] = is;
        const double g = vg[static_cast<std::size_t>(ci)];
        const double b = vb[static_cast<std::size_t>(ci)];
        double* o = out.data() + static_cast<std::size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) o[i] = g * (in[i] - m) * is + b;
    }
    return push(std::move(out), wants_grad(x) || wants_grad(gain) || wants_grad(bias),
                [x, gain, bias, c, hw, mu, istd](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& v = t.value(x);
        const Tensor& vg = t.value(gain);
        for (int ci = 0; ci < c; ++ci) {
            const double* gout = g.data() + static_cast<std::size_t>(ci) * hw;
            const double* in = v.data() + static_cast<std::size_t>(ci) * hw;
            const double m = (*mu)[static_cast<std::size_t>(ci)];
            const double is = (*istd)[static_cast<std::size_t>(ci)];
            double sum_g = 0.0, sum_gx = 0.0;
            for (int i = 0; i < hw; ++i) {
                sum_g += gout[i];
                sum_gx += gout[i] * (in[i] - m) * is;
            }
            if (t.wants_grad(bias)) t.grad_ref(bias)[static_cast<std::size_t>(ci)] += sum_g;
            if (t.wants_grad(gain)) t.grad_ref(gain)[static_cast<std::size_t>(ci)] += sum_gx;
            if (t.wants_grad(x)) {
                Tensor& gx = t.grad_ref(x);
                double* gxp = gx.data() + static_cast<std::size_t>(ci) * hw;
                const double gscale = vg[static_cast<std::size_t>(ci)] * is;
                const double mg = sum_g / hw, mgx = sum_gx / hw;
                for (int i = 0; i < hw; ++i) {
                    const double xhat = (in[i] - m) * is;
                    gxp[i] += gscale * (gout[i] - mg - xhat * mgx);
                }
            }
        }
    });
}

Var Tape::custom(Tensor value, std::vector<Var> parents,
                 std::function<void(Tape&, Var self)> backward) {
    bool rg = false;
    for (Var p : parents) rg = rg || wants_grad(p);
    return push(std::move(value), rg, rg ? std::move(backward) : nullptr);
}

}  // namespace dilie::ad
