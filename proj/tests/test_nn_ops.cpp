#include <catch2/catch_amalgamated.hpp>

#include "doseml/core/nn_ops.hpp"
#include "test_util.hpp"

using namespace doseml;
using Catch::Approx;

namespace {

/// Six-nested-loop reference convolution, the brute-force oracle.
Tensor conv2d_naive(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int F = w.shape[0], k = w.shape[2];
    const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
    Tensor out({N, F, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                s += x.data[((n * C + c) * H + ih) * W + iw] *
                                     w.data[((f * C + c) * k + kh) * k + kw];
                            }
                    out.data[((n * F + f) * Ho + oh) * Wo + ow] = s;
                }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
    Rng rng(1);
    Tape tp;
    Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    Var y = ops::conv2d(tp, tp.leaf(x, false), tp.leaf(Tensor({1, 1, 1, 1}, {1.0}), false), 1, 0);
    CHECK(tp.value(y).data == x.data);
}

TEST_CASE("conv2d all-ones 3x3 kernel on a constant image gives 9c") {
    Tape tp;
    Tensor x = Tensor::full({1, 1, 5, 5}, 2.5);
    Var y = ops::conv2d(tp, tp.leaf(x, false),
                        tp.leaf(Tensor::full({1, 1, 3, 3}, 1.0), false), 1, 0);
    for (double v : tp.value(y).data) CHECK(v == Approx(9.0 * 2.5).epsilon(1e-12));
}

TEST_CASE("conv2d matches the nested-loop oracle on random input") {
    Rng rng(2);
    const Tensor x = Tensor::randn({2, 3, 5, 5}, rng);
    const Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    for (const auto& [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}}) {
        Tape tp;
        Var y = ops::conv2d(tp, tp.leaf(x, false), tp.leaf(w, false), stride, pad);
        const Tensor ref = conv2d_naive(x, w, stride, pad);
        REQUIRE(tp.value(y).shape == ref.shape);
        for (std::size_t i = 0; i < ref.data.size(); ++i)
            CHECK(tp.value(y).data[i] ==
                  Approx(ref.data[i]).epsilon(1e-12).margin(1e-12));
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    Tape tp;
    Var x = tp.leaf(Tensor({1, 2, 4, 4}), false);
    Var w = tp.leaf(Tensor({1, 3, 3, 3}), false);
    CHECK_THROWS_AS(ops::conv2d(tp, x, w, 1, 0), ShapeError);
}

TEST_CASE("conv_transpose2d with a unit 1x1 kernel is the identity") {
    Rng rng(3);
    Tape tp;
    Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    Var y = ops::conv_transpose2d(tp, tp.leaf(x, false),
                                  tp.leaf(Tensor({1, 1, 1, 1}, {1.0}), false), 1, 0, 0);
    CHECK(tp.value(y).data == x.data);
}

TEST_CASE("conv_transpose2d doubles 4x4 to 8x8 with the decoder hyperparameters") {
    Rng rng(4);
    Tape tp;
    Var y = ops::conv_transpose2d(tp, tp.leaf(Tensor::randn({1, 2, 4, 4}, rng), false),
                                  tp.leaf(Tensor::randn({2, 3, 3, 3}, rng), false), 2, 1, 1);
    CHECK(tp.value(y).shape == std::vector<int>{1, 3, 8, 8});
}

TEST_CASE("conv_transpose2d rejects output_padding >= stride") {
    Tape tp;
    Var x = tp.leaf(Tensor({1, 1, 4, 4}), false);
    Var w = tp.leaf(Tensor({1, 1, 3, 3}), false);
    CHECK_THROWS_AS(ops::conv_transpose2d(tp, x, w, 2, 1, 2), ArgumentError);
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
    Rng rng(5);
    for (const auto& [stride, pad] : {std::pair{1, 0}, {2, 1}, {2, 0}}) {
        const Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
        const Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
        Tape tp;
        Var cx = ops::conv2d(tp, tp.leaf(x, false), tp.leaf(w, false), stride, pad);
        const Tensor y = Tensor::randn(tp.value(cx).shape, rng);
        const int out_pad = (6 + 2 * pad - 3) % stride;
        Var xty = ops::conv_transpose2d(tp, tp.leaf(y, false), tp.leaf(w, false), stride, pad,
                                        out_pad);
        REQUIRE(tp.value(xty).shape == x.shape);
        const double lhs = dot(tp.value(cx).data, y.data);
        const double rhs = dot(x.data, tp.value(xty).data);
        CHECK(lhs == Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("conv2d gradients w.r.t. input, weight, and bias pass finite differences") {
    Rng rng(6);
    const Tensor x0 = Tensor::randn({2, 2, 5, 5}, rng);
    const Tensor w0 = Tensor::randn({3, 2, 3, 3}, rng);
    const Tensor b0 = Tensor::randn({3}, rng);
    auto loss = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
        Tape t;
        Var y = ops::conv2d(t, t.leaf(x, false), t.leaf(w, false), 2, 1, t.leaf(b, false));
        return t.value(ops::mean(t, ops::square(t, y))).data[0];
    };
    Tape t;
    Var xv = t.leaf(x0, true), wv = t.leaf(w0, true), bv = t.leaf(b0, true);
    t.backward(ops::mean(t, ops::square(t, ops::conv2d(t, xv, wv, 2, 1, bv))));
    auto fd_x = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(Tensor(x0.shape, v), w0, b0); }, x0.data);
    auto fd_w = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, Tensor(w0.shape, v), b0); }, w0.data);
    auto fd_b = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, w0, Tensor(b0.shape, v)); }, b0.data);
    CHECK(testutil::max_rel_error(t.grad(xv), fd_x) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(wv), fd_w) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(bv), fd_b) < 1e-4);
}

TEST_CASE("conv_transpose2d gradients pass finite differences") {
    Rng rng(7);
    const Tensor x0 = Tensor::randn({1, 3, 4, 4}, rng);
    const Tensor w0 = Tensor::randn({3, 2, 3, 3}, rng);
    auto loss = [&](const Tensor& x, const Tensor& w) {
        Tape t;
        Var y = ops::conv_transpose2d(t, t.leaf(x, false), t.leaf(w, false), 2, 1, 1);
        return t.value(ops::mean(t, ops::square(t, y))).data[0];
    };
    Tape t;
    Var xv = t.leaf(x0, true), wv = t.leaf(w0, true);
    t.backward(ops::mean(t, ops::square(t, ops::conv_transpose2d(t, xv, wv, 2, 1, 1))));
    auto fd_x = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(Tensor(x0.shape, v), w0); }, x0.data);
    auto fd_w = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, Tensor(w0.shape, v)); }, w0.data);
    CHECK(testutil::max_rel_error(t.grad(xv), fd_x) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(wv), fd_w) < 1e-4);
}

TEST_CASE("reflection pad 0 is the identity") {
    Rng rng(8);
    Tape tp;
    Tensor x = Tensor::randn({1, 1, 3, 3}, rng);
    CHECK(tp.value(ops::reflection_pad2d(tp, tp.leaf(x, false), 0)).data == x.data);
}

TEST_CASE("reflection pad mirrors a row without repeating the edge") {
    Tape tp;
    Var x = tp.leaf(Tensor({1, 1, 1, 3}, {1.0, 2.0, 3.0}), false);
    // Height 1 cannot mirror, so pad the width only via a 3x3 image instead;
    // check the canonical [2,1,2,3,2] pattern on the middle row.
    Var y = tp.leaf(Tensor({1, 1, 3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3}), false);
    const Tensor out = tp.value(ops::reflection_pad2d(tp, y, 1));
    REQUIRE(out.shape == std::vector<int>{1, 1, 5, 5});
    const int row = 2;  // middle row of the padded image
    std::vector<double> middle(out.data.begin() + row * 5, out.data.begin() + (row + 1) * 5);
    CHECK(middle == std::vector<double>{2, 1, 2, 3, 2});
    (void)x;
}

TEST_CASE("reflection pad matches the index-mirroring oracle on random 5x5") {
    Rng rng(9);
    const Tensor x = Tensor::randn({1, 1, 5, 5}, rng);
    Tape tp;
    const Tensor out = tp.value(ops::reflection_pad2d(tp, tp.leaf(x, false), 2));
    auto mirror = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * (n - 1) - i;
        return i;
    };
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c)
            CHECK(out.data[r * 9 + c] == x.data[mirror(r - 2, 5) * 5 + mirror(c - 2, 5)]);
}

TEST_CASE("reflection pad rejects pad >= min(H, W)") {
    Tape tp;
    Var x = tp.leaf(Tensor({1, 1, 3, 5}), false);
    CHECK_THROWS_AS(ops::reflection_pad2d(tp, x, 3), ArgumentError);
}

TEST_CASE("reflection pad gradient passes finite differences") {
    Rng rng(10);
    const Tensor x0 = Tensor::randn({1, 2, 4, 4}, rng);
    auto loss = [&](const std::vector<double>& v) {
        Tape t;
        Var y = ops::reflection_pad2d(t, t.leaf(Tensor(x0.shape, v), false), 1);
        return t.value(ops::mean(t, ops::square(t, y))).data[0];
    };
    Tape t;
    Var xv = t.leaf(x0, true);
    t.backward(ops::mean(t, ops::square(t, ops::reflection_pad2d(t, xv, 1))));
    CHECK(testutil::max_rel_error(t.grad(xv), testutil::finite_diff(loss, x0.data)) < 1e-4);
}

TEST_CASE("batch norm of a constant channel is all zeros") {
    Tape tp;
    ops::RunningStats rs;
    Var x = tp.leaf(Tensor::full({2, 1, 3, 3}, 7.0), false);
    Var y = ops::batch_norm(tp, x, tp.leaf(Tensor::full({1}, 1.0), false),
                            tp.leaf(Tensor({1}), false), rs, true);
    for (double v : tp.value(y).data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("batch norm affine: gamma 2 beta 3 on standardized data") {
    Rng rng(11);
    Tape tp;
    ops::RunningStats rs;
    Tensor x = Tensor::randn({4, 2, 5, 5}, rng);
    Var y = ops::batch_norm(tp, tp.leaf(x, false), tp.leaf(Tensor::full({2}, 2.0), false),
                            tp.leaf(Tensor::full({2}, 3.0), false), rs, true);
    const Tensor& out = tp.value(y);
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        long n = 0;
        for (int b = 0; b < 4; ++b)
            for (int i = 0; i < 25; ++i) {
                mean += out.data[(b * 2 + c) * 25 + i];
                ++n;
            }
        mean /= n;
        for (int b = 0; b < 4; ++b)
            for (int i = 0; i < 25; ++i) {
                const double d = out.data[(b * 2 + c) * 25 + i] - mean;
                var += d * d;
            }
        var /= n;
        CHECK(mean == Approx(3.0).margin(1e-9));
        CHECK(std::sqrt(var) == Approx(2.0).margin(1e-4));
    }
}

TEST_CASE("batch norm output has near-zero per-channel mean pre-affine") {
    Rng rng(12);
    Tape tp;
    ops::RunningStats rs;
    Var y = ops::batch_norm(tp, tp.leaf(Tensor::randn({3, 4, 6, 6}, rng), false),
                            tp.leaf(Tensor::full({4}, 1.0), false), tp.leaf(Tensor({4}), false),
                            rs, true);
    const Tensor& out = tp.value(y);
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int b = 0; b < 3; ++b)
            for (int i = 0; i < 36; ++i) mean += out.data[(b * 4 + c) * 36 + i];
        CHECK(std::abs(mean / (3 * 36)) < 1e-6);
    }
}

TEST_CASE("batch norm eval mode uses running statistics deterministically") {
    Rng rng(13);
    ops::RunningStats rs;
    const Tensor train_x = Tensor::randn({4, 2, 4, 4}, rng);
    {
        Tape tp;
        ops::batch_norm(tp, tp.leaf(train_x, false), tp.leaf(Tensor::full({2}, 1.0), false),
                        tp.leaf(Tensor({2}), false), rs, true);
    }
    REQUIRE(!rs.mean.empty());
    const Tensor eval_x = Tensor::randn({1, 2, 4, 4}, rng);
    auto eval_once = [&]() {
        Tape tp;
        Var y = ops::batch_norm(tp, tp.leaf(eval_x, false),
                                tp.leaf(Tensor::full({2}, 1.0), false),
                                tp.leaf(Tensor({2}), false), rs, false);
        return tp.value(y).data;
    };
    CHECK(eval_once() == eval_once());
}

TEST_CASE("batch norm gradients pass finite differences") {
    Rng rng(14);
    const Tensor x0 = Tensor::randn({3, 2, 4, 4}, rng);
    const Tensor g0 = Tensor::randn({2}, rng);
    const Tensor b0 = Tensor::randn({2}, rng);
    auto loss = [&](const Tensor& x, const Tensor& g, const Tensor& b) {
        Tape t;
        ops::RunningStats rs;
        Var y = ops::batch_norm(t, t.leaf(x, false), t.leaf(g, false), t.leaf(b, false), rs, true);
        return t.value(ops::mean(t, ops::square(t, ops::tanh_(t, y)))).data[0];
    };
    Tape t;
    ops::RunningStats rs;
    Var xv = t.leaf(x0, true), gv = t.leaf(g0, true), bv = t.leaf(b0, true);
    t.backward(
        ops::mean(t, ops::square(t, ops::tanh_(t, ops::batch_norm(t, xv, gv, bv, rs, true)))));
    auto fd_x = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(Tensor(x0.shape, v), g0, b0); }, x0.data);
    auto fd_g = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, Tensor(g0.shape, v), b0); }, g0.data);
    auto fd_b = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, g0, Tensor(b0.shape, v)); }, b0.data);
    CHECK(testutil::max_rel_error(t.grad(xv), fd_x) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(gv), fd_g) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(bv), fd_b) < 1e-4);
}

TEST_CASE("linear layer gradients pass finite differences") {
    Rng rng(15);
    const Tensor x0 = Tensor::randn({3, 4}, rng);
    const Tensor w0 = Tensor::randn({2, 4}, rng);
    const Tensor b0 = Tensor::randn({2}, rng);
    auto loss = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
        Tape t;
        Var y = ops::linear(t, t.leaf(x, false), t.leaf(w, false), t.leaf(b, false));
        return t.value(ops::mean(t, ops::square(t, y))).data[0];
    };
    Tape t;
    Var xv = t.leaf(x0, true), wv = t.leaf(w0, true), bv = t.leaf(b0, true);
    t.backward(ops::mean(t, ops::square(t, ops::linear(t, xv, wv, bv))));
    auto fd_x = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(Tensor(x0.shape, v), w0, b0); }, x0.data);
    auto fd_w = testutil::finite_diff(
        [&](const std::vector<double>& v) { return loss(x0, Tensor(w0.shape, v), b0); }, w0.data);
    CHECK(testutil::max_rel_error(t.grad(xv), fd_x) < 1e-4);
    CHECK(testutil::max_rel_error(t.grad(wv), fd_w) < 1e-4);
    (void)bv;
}
