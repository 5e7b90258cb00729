#pragma once

#include <Eigen/Dense>

#include "doseml/core/tape.hpp"

namespace doseml::ops {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace detail {

/// Scatter x[C,H,W] (zero-padded, strided) into columns [C*k*k, Ho*Wo].
inline void im2col(const double* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo,
                   double* col) {
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * s + ki - p;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * s + kj - p;
                        row[oh * Wo + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                                ? x[(c * H + ih) * W + iw]
                                                : 0.0;
                    }
                }
            }
}

/// Adjoint of im2col: accumulate columns back into x[C,H,W].
inline void col2im_add(const double* col, int C, int H, int W, int k, int s, int p, int Ho, int Wo,
                       double* x) {
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + ((c * k + ki) * k + kj) * (Ho * Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * s + ki - p;
                    if (ih < 0 || ih >= H) continue;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * s + kj - p;
                        if (iw >= 0 && iw < W) x[(c * H + ih) * W + iw] += row[oh * Wo + ow];
                    }
                }
            }
}

}  // namespace detail

/// 2-D convolution. input [N,C,H,W], weight [F,C,k,k], optional bias [F].
/// Ho = floor((H + 2p - k)/s) + 1.
inline Var conv2d(Tape& tp, Var input, Var weight, int stride, int padding, Var bias = Var{}) {
    const Tensor& x = tp.value(input);
    const Tensor& w = tp.value(weight);
    if (x.shape.size() != 4 || w.shape.size() != 4)
        throw ShapeError("conv2d expects 4-D input and weight");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int F = w.shape[0], k = w.shape[2];
    if (w.shape[1] != C)
        throw ShapeError("conv2d: weight channels " + std::to_string(w.shape[1]) +
                         " do not match input channels " + std::to_string(C));
    if (w.shape[3] != k || k % 2 == 0) throw ArgumentError("conv2d: kernel must be square and odd");
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (H + 2 * padding < k || W + 2 * padding < k)
        throw ShapeError("conv2d: kernel larger than padded input");
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    const int ckk = C * k * k;

    Tensor out({N, F, Ho, Wo});
    std::vector<double> col(static_cast<std::size_t>(ckk) * Ho * Wo);
    CMapRM wm(w.data.data(), F, ckk);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.data.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride,
                       padding, Ho, Wo, col.data());
        CMapRM cm(col.data(), ckk, Ho * Wo);
        MapRM om(out.data.data() + static_cast<std::size_t>(n) * F * Ho * Wo, F, Ho * Wo);
        om.noalias() = wm * cm;
    }
    if (bias.idx >= 0) {
        const Tensor& b = tp.value(bias);
        if (b.numel() != F) throw ShapeError("conv2d: bias length must equal filter count");
        for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f) {
                double* o = out.data.data() + ((static_cast<std::size_t>(n) * F + f) * Ho * Wo);
                for (int i = 0; i < Ho * Wo; ++i) o[i] += b.data[f];
            }
    }

    std::vector<int> parents = {input.idx, weight.idx};
    if (bias.idx >= 0) parents.push_back(bias.idx);
    auto back = [input, weight, bias, N, C, H, W, F, k, stride, padding, Ho, Wo,
                 ckk](Tape& t, int self) {
        const auto& g = t.grad(self);
        const Tensor& xv = t.value(input);
        const Tensor& wv = t.value(weight);
        auto& gx = t.grad(input.idx);
        auto& gw = t.grad(weight.idx);
        CMapRM wm(wv.data.data(), F, ckk);
        MapRM gwm(gw.data(), F, ckk);
        std::vector<double> col(static_cast<std::size_t>(ckk) * Ho * Wo);
        std::vector<double> dcol(col.size());
        for (int n = 0; n < N; ++n) {
            CMapRM gom(g.data() + static_cast<std::size_t>(n) * F * Ho * Wo, F, Ho * Wo);
            detail::im2col(xv.data.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k,
                           stride, padding, Ho, Wo, col.data());
            CMapRM cm(col.data(), ckk, Ho * Wo);
            gwm.noalias() += gom * cm.transpose();
            if (t.requires_grad(input)) {
                MapRM dcm(dcol.data(), ckk, Ho * Wo);
                dcm.noalias() = wm.transpose() * gom;
                detail::col2im_add(dcol.data(), C, H, W, k, stride, padding, Ho, Wo,
                                   gx.data() + static_cast<std::size_t>(n) * C * H * W);
            }
        }
        if (bias.idx >= 0) {
            auto& gb = t.grad(bias.idx);
            for (int n = 0; n < N; ++n)
                for (int f = 0; f < F; ++f) {
                    const double* go = g.data() + ((static_cast<std::size_t>(n) * F + f) * Ho * Wo);
                    double s = 0.0;
                    for (int i = 0; i < Ho * Wo; ++i) s += go[i];
                    gb[f] += s;
                }
        }
    };
    return tp.record(std::move(out), std::move(parents), std::move(back));
}

/// Transposed 2-D convolution, the exact adjoint of conv2d with the same
/// weight layout [F,C,k,k]: input [N,F,H,W] -> output [N,C,Ho,Wo] with
/// Ho = (H-1)*stride - 2*padding + k + output_padding.
inline Var conv_transpose2d(Tape& tp, Var input, Var weight, int stride, int padding,
                            int output_padding, Var bias = Var{}) {
    const Tensor& y = tp.value(input);
    const Tensor& w = tp.value(weight);
    if (y.shape.size() != 4 || w.shape.size() != 4)
        throw ShapeError("conv_transpose2d expects 4-D input and weight");
    if (output_padding >= stride)
        throw ArgumentError("conv_transpose2d: output_padding must be < stride");
    const int N = y.shape[0], F = y.shape[1], H = y.shape[2], W = y.shape[3];
    const int C = w.shape[1], k = w.shape[2];
    if (w.shape[0] != F) throw ShapeError("conv_transpose2d: weight filters do not match input channels");
    const int Ho = (H - 1) * stride - 2 * padding + k + output_padding;
    const int Wo = (W - 1) * stride - 2 * padding + k + output_padding;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv_transpose2d: non-positive output size");
    const int ckk = C * k * k;

    Tensor out({N, C, Ho, Wo});
    std::vector<double> col(static_cast<std::size_t>(ckk) * H * W);
    CMapRM wm(w.data.data(), F, ckk);
    for (int n = 0; n < N; ++n) {
        CMapRM ym(y.data.data() + static_cast<std::size_t>(n) * F * H * W, F, H * W);
        MapRM cm(col.data(), ckk, H * W);
        cm.noalias() = wm.transpose() * ym;
        detail::col2im_add(col.data(), C, Ho, Wo, k, stride, padding, H, W,
                           out.data.data() + static_cast<std::size_t>(n) * C * Ho * Wo);
    }
    if (bias.idx >= 0) {
        const Tensor& b = tp.value(bias);
        if (b.numel() != C) throw ShapeError("conv_transpose2d: bias length must equal output channels");
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                double* o = out.data.data() + ((static_cast<std::size_t>(n) * C + c) * Ho * Wo);
                for (int i = 0; i < Ho * Wo; ++i) o[i] += b.data[c];
            }
    }

    std::vector<int> parents = {input.idx, weight.idx};
    if (bias.idx >= 0) parents.push_back(bias.idx);
    auto back = [input, weight, bias, N, C, F, H, W, k, stride, padding, Ho, Wo,
                 ckk](Tape& t, int self) {
        const auto& g = t.grad(self);
        const Tensor& yv = t.value(input);
        const Tensor& wv = t.value(weight);
        auto& gy = t.grad(input.idx);
        auto& gw = t.grad(weight.idx);
        CMapRM wm(wv.data.data(), F, ckk);
        MapRM gwm(gw.data(), F, ckk);
        std::vector<double> dcol(static_cast<std::size_t>(ckk) * H * W);
        for (int n = 0; n < N; ++n) {
            detail::im2col(g.data() + static_cast<std::size_t>(n) * C * Ho * Wo, C, Ho, Wo, k,
                           stride, padding, H, W, dcol.data());
            CMapRM dcm(dcol.data(), ckk, H * W);
            CMapRM ym(yv.data.data() + static_cast<std::size_t>(n) * F * H * W, F, H * W);
            gwm.noalias() += ym * dcm.transpose();
            if (t.requires_grad(input)) {
                MapRM gym(gy.data() + static_cast<std::size_t>(n) * F * H * W, F, H * W);
                gym.noalias() += wm * dcm;
            }
        }
        if (bias.idx >= 0) {
            auto& gb = t.grad(bias.idx);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const double* go = g.data() + ((static_cast<std::size_t>(n) * C + c) * Ho * Wo);
                    double s = 0.0;
                    for (int i = 0; i < Ho * Wo; ++i) s += go[i];
                    gb[c] += s;
                }
        }
    };
    return tp.record(std::move(out), std::move(parents), std::move(back));
}

/// Mirror padding without repeating the edge pixel: row [1,2,3] with pad 1
/// becomes [2,1,2,3,2].
inline Var reflection_pad2d(Tape& tp, Var input, int pad) {
    const Tensor& x = tp.value(input);
    if (x.shape.size() != 4) throw ShapeError("reflection_pad2d expects a 4-D tensor");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (pad < 0 || (pad > 0 && pad >= std::min(H, W)))
        throw ArgumentError("reflection_pad2d: pad must be < min(H, W)");
    if (pad == 0) return input;
    const int Ho = H + 2 * pad, Wo = W + 2 * pad;
    auto mirror = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    Tensor out({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = x.data.data() + static_cast<std::size_t>(nc) * H * W;
        double* dst = out.data.data() + static_cast<std::size_t>(nc) * Ho * Wo;
        for (int i = 0; i < Ho; ++i) {
            const int si = mirror(i - pad, H);
            for (int j = 0; j < Wo; ++j) dst[i * Wo + j] = src[si * W + mirror(j - pad, W)];
        }
    }
    return tp.record(std::move(out), {input.idx},
                     [input, N, C, H, W, pad, Ho, Wo, mirror](Tape& t, int self) {
                         const auto& g = t.grad(self);
                         auto& gx = t.grad(input.idx);
                         for (int nc = 0; nc < N * C; ++nc) {
                             const double* gsrc = g.data() + static_cast<std::size_t>(nc) * Ho * Wo;
                             double* gdst = gx.data() + static_cast<std::size_t>(nc) * H * W;
                             for (int i = 0; i < Ho; ++i) {
                                 const int si = mirror(i - pad, H);
                                 for (int j = 0; j < Wo; ++j)
                                     gdst[si * W + mirror(j - pad, W)] += gsrc[i * Wo + j];
                             }
                         }
                     });
}

/// Running statistics for batch normalization; lives outside the tape.
struct RunningStats {
    std::vector<double> mean, var;

    void init(int channels) {
        if (mean.empty()) {
            mean.assign(channels, 0.0);
            var.assign(channels, 1.0);
        }
    }
};

/// Per-channel batch normalization over [N,C,H,W]. In train mode normalizes
/// with batch statistics and updates `rs`; in eval mode uses `rs` unchanged.
inline Var batch_norm(Tape& tp, Var input, Var gamma, Var beta, RunningStats& rs, bool train,
                      double momentum = 0.1, double eps = 1e-5) {
    const Tensor& x = tp.value(input);
    if (x.shape.size() != 4) throw ShapeError("batch_norm expects a 4-D tensor");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const long m = static_cast<long>(N) * H * W;
    if (train && m < 2) throw ArgumentError("batch_norm: batch of size < 2 in train mode");
    if (tp.value(gamma).numel() != C || tp.value(beta).numel() != C)
        throw ShapeError("batch_norm: gamma/beta must have one entry per channel");
    rs.init(C);

    std::vector<double> mu(C), var(C);
    if (train) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x.data.data() + ((static_cast<std::size_t>(n) * C + c) * H * W);
                for (long i = 0; i < static_cast<long>(H) * W; ++i) s += p[i];
            }
            mu[c] = s / m;
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x.data.data() + ((static_cast<std::size_t>(n) * C + c) * H * W);
                for (long i = 0; i < static_cast<long>(H) * W; ++i) {
                    const double d = p[i] - mu[c];
                    v += d * d;
                }
            }
            var[c] = v / m;
            rs.mean[c] = (1.0 - momentum) * rs.mean[c] + momentum * mu[c];
            const double unbiased = m > 1 ? var[c] * m / (m - 1.0) : var[c];
            rs.var[c] = (1.0 - momentum) * rs.var[c] + momentum * unbiased;
        }
    } else {
        mu = rs.mean;
        var = rs.var;
    }

    const Tensor& gv = tp.value(gamma);
    const Tensor& bv = tp.value(beta);
    Tensor out({N, C, H, W});
    std::vector<double> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x.data.data() + ((static_cast<std::size_t>(n) * C + c) * H * W);
            double* o = out.data.data() + ((static_cast<std::size_t>(n) * C + c) * H * W);
            for (long i = 0; i < static_cast<long>(H) * W; ++i)
                o[i] = gv.data[c] * (p[i] - mu[c]) * inv_std[c] + bv.data[c];
        }

    auto back = [input, gamma, beta, N, C, H, W, m, mu, inv_std, train](Tape& t, int self) {
        const auto& g = t.grad(self);
        const Tensor& xv = t.value(input);
        const Tensor& gv = t.value(gamma);
        auto& gx = t.grad(input.idx);
        auto& gg = t.grad(gamma.idx);
        auto& gb = t.grad(beta.idx);
        const long hw = static_cast<long>(H) * W;
        for (int c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
                for (long i = 0; i < hw; ++i) {
                    const double xhat = (xv.data[off + i] - mu[c]) * inv_std[c];
                    sum_dy += g[off + i];
                    sum_dy_xhat += g[off + i] * xhat;
                }
            }
            gg[c] += sum_dy_xhat;
            gb[c] += sum_dy;
            if (!t.requires_grad(input)) continue;
            const double k = gv.data[c] * inv_std[c];
            if (train) {
                const double mean_dy = sum_dy / m, mean_dy_xhat = sum_dy_xhat / m;
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
                    for (long i = 0; i < hw; ++i) {
                        const double xhat = (xv.data[off + i] - mu[c]) * inv_std[c];
                        gx[off + i] += k * (g[off + i] - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            } else {
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
                    for (long i = 0; i < hw; ++i) gx[off + i] += k * g[off + i];
                }
            }
        }
    };
    return tp.record(std::move(out), {input.idx, gamma.idx, beta.idx}, std::move(back));
}

/// Fully connected layer: x [N,D], weight [M,D], bias [M] -> [N,M].
inline Var linear(Tape& tp, Var input, Var weight, Var bias) {
    const Tensor& x = tp.value(input);
    const Tensor& w = tp.value(weight);
    if (x.shape.size() != 2 || w.shape.size() != 2) throw ShapeError("linear expects 2-D tensors");
    const int N = x.shape[0], D = x.shape[1], M = w.shape[0];
    if (w.shape[1] != D) throw ShapeError("linear: weight width does not match input features");
    if (tp.value(bias).numel() != M) throw ShapeError("linear: bias length mismatch");
    Tensor out({N, M});
    CMapRM xm(x.data.data(), N, D);
    CMapRM wm(w.data.data(), M, D);
    MapRM om(out.data.data(), N, M);
    om.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < M; ++j) out.data[n * M + j] += tp.value(bias).data[j];
    return tp.record(std::move(out), {input.idx, weight.idx, bias.idx},
                     [input, weight, bias, N, D, M](Tape& t, int self) {
                         const auto& g = t.grad(self);
                         CMapRM gm(g.data(), N, M);
                         CMapRM xm(t.value(input).data.data(), N, D);
                         CMapRM wm(t.value(weight).data.data(), M, D);
                         if (t.requires_grad(input)) {
                             MapRM gxm(t.grad(input.idx).data(), N, D);
                             gxm.noalias() += gm * wm;
                         }
                         MapRM gwm(t.grad(weight.idx).data(), M, D);
                         gwm.noalias() += gm.transpose() * xm;
                         auto& gb = t.grad(bias.idx);
                         for (int n = 0; n < N; ++n)
                             for (int j = 0; j < M; ++j) gb[j] += g[n * M + j];
                     });
}

}  // namespace doseml::ops
