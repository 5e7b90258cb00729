#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "doseml/core/error.hpp"
#include "doseml/core/rng.hpp"

namespace doseml {

/// Dense row-major N-D array of doubles. Plain value type; gradients live on
/// the tape, not here.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::size_t>(numel_of(shape)) != data.size())
            throw ShapeError("tensor data size does not match shape");
    }

    static long numel_of(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape");
            n *= d;
        }
        return n;
    }

    long numel() const { return static_cast<long>(data.size()); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = rng.normal(0.0, stddev);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace doseml
