#include <doctest.h>

#include <string>

#include "dilie/ad.hpp"
#include "dilie/rng.hpp"
#include "../support/gradcheck.hpp"

using namespace dilie;
using testsupport::grad_check;

namespace {

Tensor rand_t(std::vector<int> dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    Rng r(seed);
    for (double& v : t.vec()) v = r.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tape gradients match central differences across the op set") {
    struct Case {
        const char* name;
        testsupport::LossBuilder build;
        std::vector<Tensor> inputs;
    };
    const std::vector<Case> cases = {
        {"elementwise chain",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.mean(t.mul(t.add(v[0], t.affine(v[1], 1.7, 0.2)),
                                 t.sigmoid(t.leaky_relu(v[1], 0.1))));
         },
         {rand_t({4, 5}, 1), rand_t({4, 5}, 2)}},
        {"exp/log/reciprocal",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return t.mean(t.log(t.reciprocal(t.exp(v[0]), 0.1)));
         },
         {rand_t({3, 7}, 3)}},
        {"matmul all transpose flags",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var nn = t.matmul(v[0], v[1], false, false);
             ad::Var tt = t.matmul(v[1], v[0], true, true);
             ad::Var nt = t.matmul(v[0], v[0], false, true);
             ad::Var tn = t.matmul(v[0], v[0], true, false);
             return t.add(t.add(t.mean(nn), t.mean(tt)), t.add(t.mean(nt), t.mean(tn)));
         },
         {rand_t({4, 3}, 4), rand_t({3, 5}, 5)}},
        {"row machinery",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var x = t.row_scale(v[0], t.reciprocal(t.row_sum(v[0]), 0.3));
             x = t.add_row_vector(x, v[1], -0.5);
             x = t.row_unit(x, 1e-9);
             return t.add(t.mean(t.row_min(x)),
                          t.add(t.mean(t.row_max(x)), t.mean(t.col_min(x))));
         },
         {rand_t({5, 4}, 6, 0.2, 1.0), rand_t({4}, 7)}},
        {"gather/transpose/reshape/max_of",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var g = t.gather_rows(v[0], {0, 2, 2, 4});
             ad::Var tr = t.transpose(g);
             return t.max_of(t.mean(tr), t.mean(t.reshape(v[0], {4, 5})));
         },
         {rand_t({5, 4}, 8)}},
        {"conv stride 1 and 2",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var y1 = t.conv2d(v[0], v[1], v[2], 1, 1);
             ad::Var y2 = t.conv2d(y1, v[3], v[4], 2, 1);
             return t.mean(t.mul(y2, y2));
         },
         {rand_t({2, 6, 6}, 9), rand_t({3, 2, 3, 3}, 10, -0.4, 0.4), rand_t({3}, 11),
          rand_t({2, 3, 3, 3}, 12, -0.4, 0.4), rand_t({2}, 13)}},
        {"pool/upsample/downsample",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var y = t.upsample_bilinear2(t.maxpool2(v[0]));
             return t.mean(t.mul(t.area_downsample(y, 2), v[1]));
         },
         {rand_t({2, 6, 6}, 14), rand_t({2, 3, 3}, 15)}},
        {"instance norm + concat + pad/crop + broadcast",
         [](ad::Tape& t, const std::vector<ad::Var>& v) {
             ad::Var n = t.instance_norm(v[0], v[1], v[2], 1e-5);
             ad::Var cc = t.concat_ch(n, t.broadcast_chw(v[3], 5, 4));
             ad::Var padded = t.crop2d(t.pad2d_replicate(cc, 2, 1), 5, 4);
             return t.mean(t.mul(padded, v[4]));
         },
         {rand_t({3, 5, 4}, 16), rand_t({3}, 17, 0.5, 1.5), rand_t({3}, 18),
          rand_t({2}, 19), rand_t({5, 5, 4}, 20)}},
    };

    for (const auto& c : cases) {
        const std::string case_name = c.name;
        CAPTURE(case_name);
        for (std::size_t which = 0; which < c.inputs.size(); ++which) {
            const auto r = grad_check(c.build, c.inputs, which);
            CAPTURE(which);
            CHECK(r.rel_err < 1e-6);
        }
    }
}

TEST_CASE("backward requires a scalar root and propagates only where needed") {
    ad::Tape t;
    ad::Var a = t.leaf(rand_t({3, 3}, 20), true);
    ad::Var frozen = t.leaf(rand_t({3, 3}, 21), false);
    ad::Var loss = t.mean(t.mul(a, frozen));
    CHECK_THROWS(t.backward(t.mul(a, frozen)));
    t.backward(loss);
    CHECK(t.grad(a).numel() == 9);
    CHECK(!t.wants_grad(frozen));
}
