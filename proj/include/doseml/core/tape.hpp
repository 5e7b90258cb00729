#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "doseml/core/error.hpp"
#include "doseml/core/tensor.hpp"

namespace doseml {

/// Handle to a node on a Tape.
struct Var {
    int idx = -1;
};

/// Reverse-mode differentiation tape. Records ops in execution order, which
/// is already a topological order, and replays their adjoints backwards.
/// One tape per training step; single-owner, not shared across threads.
class Tape {
public:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backprop;  // pulls grad from node into parents
        bool requires_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var record(Tensor value, std::vector<int> parents, std::function<void(Tape&, int)> backprop) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        for (int p : n.parents)
            if (nodes_[p].requires_grad) n.requires_grad = true;
        if (n.requires_grad) n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    Tensor& value(Var v) { return nodes_[v.idx].value; }
    std::vector<double>& grad(Var v) { return nodes_[v.idx].grad; }
    std::vector<double>& grad(int i) { return nodes_[i].grad; }
    bool requires_grad(Var v) const { return nodes_[v.idx].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Accumulate d(loss)/d(node) for every requires_grad ancestor of `loss`.
    /// `loss` must be scalar. Repeated calls accumulate.
    void backward(Var loss) {
        if (nodes_.empty()) throw ArgumentError("backward on empty tape");
        if (nodes_[loss.idx].value.numel() != 1)
            throw ArgumentError("backward requires a scalar loss, got shape " +
                                nodes_[loss.idx].value.shape_str());
        ensure_grad(loss.idx);
        nodes_[loss.idx].grad[0] += 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
            for (int p : n.parents) ensure_grad(p);
            n.backprop(*this, i);
        }
    }

    void ensure_grad(int i) {
        if (nodes_[i].grad.empty()) nodes_[i].grad.assign(nodes_[i].value.data.size(), 0.0);
    }

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.
// ---------------------------------------------------------------------------

namespace ops {

inline void check_same_shape(const Tape& tp, Var a, Var b, const char* what) {
    if (!tp.value(a).same_shape(tp.value(b)))
        throw ShapeError(std::string(what) + ": shape mismatch " + tp.value(a).shape_str() +
                         " vs " + tp.value(b).shape_str());
}

inline Var add(Tape& tp, Var a, Var b) {
    check_same_shape(tp, a, b, "add");
    Tensor out = tp.value(a);
    const auto& bd = tp.value(b).data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
    return tp.record(std::move(out), {a.idx, b.idx}, [a, b](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        auto& gb = t.grad(b.idx);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

inline Var sub(Tape& tp, Var a, Var b) {
    check_same_shape(tp, a, b, "sub");
    Tensor out = tp.value(a);
    const auto& bd = tp.value(b).data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bd[i];
    return tp.record(std::move(out), {a.idx, b.idx}, [a, b](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        auto& gb = t.grad(b.idx);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

inline Var mul(Tape& tp, Var a, Var b) {
    check_same_shape(tp, a, b, "mul");
    Tensor out = tp.value(a);
    const auto& bd = tp.value(b).data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bd[i];
    return tp.record(std::move(out), {a.idx, b.idx}, [a, b](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& av = t.value(Var{a.idx}).data;
        const auto& bv = t.value(Var{b.idx}).data;
        auto& ga = t.grad(a.idx);
        auto& gb = t.grad(b.idx);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(Tape& tp, Var a, double c) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x *= c;
    return tp.record(std::move(out), {a.idx}, [a, c](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

inline Var add_const(Tape& tp, Var a, double c) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x += c;
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline Var relu(Tape& tp, Var a) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& av = t.value(Var{a.idx}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
}

inline Var leaky_relu(Tape& tp, Var a, double slope = 0.2) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = x > 0.0 ? x : slope * x;
    return tp.record(std::move(out), {a.idx}, [a, slope](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& av = t.value(Var{a.idx}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (av[i] > 0.0 ? 1.0 : slope) * g[i];
    });
}

inline Var tanh_(Tape& tp, Var a) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = std::tanh(x);
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& ov = t.value(Var{self}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - ov[i] * ov[i]) * g[i];
    });
}

inline Var sigmoid(Tape& tp, Var a) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& ov = t.value(Var{self}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += ov[i] * (1.0 - ov[i]) * g[i];
    });
}

inline Var exp_(Tape& tp, Var a) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = std::exp(x);
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& ov = t.value(Var{self}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += ov[i] * g[i];
    });
}

/// log with the argument clamped to [eps, inf); keeps GAN losses finite.
inline Var log_(Tape& tp, Var a, double eps = 1e-7) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = std::log(x < eps ? eps : x);
    return tp.record(std::move(out), {a.idx}, [a, eps](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& av = t.value(Var{a.idx}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] >= eps) ga[i] += g[i] / av[i];
    });
}

inline Var square(Tape& tp, Var a) { return mul(tp, a, a); }

/// Clamp to [lo, hi]; gradient passes through strictly inside the range.
inline Var clamp(Tape& tp, Var a, double lo, double hi) {
    Tensor out = tp.value(a);
    for (double& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
    return tp.record(std::move(out), {a.idx}, [a, lo, hi](Tape& t, int self) {
        auto& g = t.grad(self);
        const auto& av = t.value(Var{a.idx}).data;
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > lo && av[i] < hi) ga[i] += g[i];
    });
}

inline Var sum(Tape& tp, Var a) {
    double s = 0.0;
    for (double x : tp.value(a).data) s += x;
    return tp.record(Tensor::scalar(s), {a.idx}, [a](Tape& t, int self) {
        double g = t.grad(self)[0];
        auto& ga = t.grad(a.idx);
        for (double& x : ga) x += g;
    });
}

inline Var mean(Tape& tp, Var a) {
    const long n = tp.value(a).numel();
    double s = 0.0;
    for (double x : tp.value(a).data) s += x;
    return tp.record(Tensor::scalar(s / n), {a.idx}, [a, n](Tape& t, int self) {
        double g = t.grad(self)[0] / n;
        auto& ga = t.grad(a.idx);
        for (double& x : ga) x += g;
    });
}

/// Sum a [N, D] tensor along D, yielding [N].
inline Var sum_rows(Tape& tp, Var a) {
    const auto& v = tp.value(a);
    if (v.shape.size() != 2) throw ShapeError("sum_rows expects a 2-D tensor");
    const int n = v.shape[0], d = v.shape[1];
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += v.data[i * d + j];
        out.data[i] = s;
    }
    return tp.record(std::move(out), {a.idx}, [a, n, d](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) ga[i * d + j] += g[i];
    });
}

/// Reinterpret with a new shape of the same element count (copying view).
inline Var reshape(Tape& tp, Var a, std::vector<int> shape) {
    if (Tensor::numel_of(shape) != tp.value(a).numel())
        throw ShapeError("reshape changes element count");
    Tensor out(std::move(shape), tp.value(a).data);
    return tp.record(std::move(out), {a.idx}, [a](Tape& t, int self) {
        auto& g = t.grad(self);
        auto& ga = t.grad(a.idx);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

/// Mean squared error between two same-shape tensors (mean over every element).
inline Var mse(Tape& tp, Var pred, Var target) {
    check_same_shape(tp, pred, target, "mse");
    return mean(tp, square(tp, sub(tp, pred, target)));
}

}  // namespace ops
}  // namespace doseml
