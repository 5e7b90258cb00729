#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "doseml/core/tensor.hpp"

namespace doseml {

/// Named trainable tensor. Long-lived across steps; registered onto a fresh
/// tape each step as a leaf.
struct Param {
    std::string name;
    Tensor value;
};

using ParamPtr = std::shared_ptr<Param>;

inline ParamPtr make_param(std::string name, Tensor value) {
    return std::make_shared<Param>(Param{std::move(name), std::move(value)});
}

/// Kaiming fan-in initialization for conv/linear weights feeding ReLU stacks.
inline Tensor kaiming_init(std::vector<int> shape, Rng& rng) {
    long fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace doseml
