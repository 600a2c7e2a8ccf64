#pragma once

#include <functional>
#include <vector>

#include "dilie/tensor.hpp"

namespace dilie::ad {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

// Reverse-mode tape over Tensor. A Tape is built fresh for each loss
// evaluation, backward() is called once on a scalar root, then gradients of
// the leaves are read back. Nodes are addressed by index so the arena may
// reallocate freely.
class Tape {
public:
    Tape();

    Var leaf(Tensor value, bool requires_grad = false);

    // elementwise (same shape)
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var affine(Var a, double scale, double shift = 0.0);
    Var exp(Var a);
    Var log(Var a);
    Var reciprocal(Var a, double eps);
    Var relu(Var a);
    Var leaky_relu(Var a, double slope);
    Var sigmoid(Var a);

    // reductions -> {1} scalars or row/col vectors
    Var sum(Var a);
    Var mean(Var a);
    Var mean_sq_diff(Var a, Var b);
    Var row_sum(Var x);             // {N,M} -> {N}
    Var row_min(Var x);             // subgradient routed to the argmin
    Var row_max(Var x);
    Var col_min(Var x);             // {N,M} -> {M}
    Var max_of(Var a, Var b);       // scalar pair

    // shape
    Var reshape(Var a, std::vector<int> dims);
    Var transpose(Var x);           // {N,M} -> {M,N}
    Var concat_ch(Var a, Var b);    // {Ca,H,W} + {Cb,H,W} -> {Ca+Cb,H,W}
    Var crop2d(Var a, int h, int w);
    Var pad2d_replicate(Var a, int bottom, int right);
    Var broadcast_chw(Var v, int h, int w);  // {C} -> {C,H,W}

    // linear algebra / feature matrices
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    Var row_scale(Var x, Var s);              // x[N,M] * s[N], row-wise
    Var add_row_vector(Var x, Var v, double alpha);  // x[N,M] + alpha * v[M]
    Var row_unit(Var x, double eps);          // rows scaled to unit L2 norm
    Var gather_rows(Var x, std::vector<int> rows);   // {N,M} -> {K,M}

    // nn blocks
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var maxpool2(Var x);
    Var upsample_bilinear2(Var x);
    Var area_downsample(Var x, int factor);  // block mean, remainder dropped
    Var instance_norm(Var x, Var gain, Var bias, double eps);

    // Escape hatch for analytically differentiated terms (sparse quadratic
    // forms etc.). The callback reads grad(self) and accumulates into the
    // parents' grads via grad_ref().
    Var custom(Tensor value, std::vector<Var> parents,
               std::function<void(Tape&, Var self)> backward);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.i)].val; }
    bool wants_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.i)].rg; }
    Tensor& grad_ref(Var v);               // allocates zeros on first touch
    const Tensor& grad(Var v) const;       // valid after backward()

    void backward(Var root);               // root must be a scalar
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grd;
        bool rg = false;
        bool grad_alloc = false;
        std::function<void(Tape&, Var)> back;
    };

    Var push(Tensor value, bool rg, std::function<void(Tape&, Var)> back);
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.i)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.i)]; }

    std::vector<Node> nodes_;
};

}  // namespace dilie::ad
