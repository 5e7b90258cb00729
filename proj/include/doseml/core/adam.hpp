#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "doseml/core/error.hpp"
#include "doseml/core/param.hpp"

namespace doseml {

/// Adam optimizer with bias correction. Moment slots are keyed by parameter
/// identity, so one optimizer can serve a subset of a model's parameters.
class Adam {
public:
    explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    long step_count() const { return step_; }
    double learning_rate() const { return lr_; }

    /// Apply one update. `grads[i]` is d(loss)/d(params[i]), same length as
    /// the parameter's flat data.
    void step(const std::vector<ParamPtr>& params,
              const std::vector<const std::vector<double>*>& grads) {
        if (params.size() != grads.size()) throw ArgumentError("adam: params/grads length mismatch");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param& p = *params[i];
            const std::vector<double>& g = *grads[i];
            if (g.size() != p.value.data.size())
                throw ArgumentError("adam: gradient shape mismatch for " + p.name);
            Slot& s = slots_[&p];
            if (s.m.empty()) {
                s.m.assign(g.size(), 0.0);
                s.v.assign(g.size(), 0.0);
            }
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!std::isfinite(g[j]))
                    throw DivergenceError("non-finite gradient in parameter " + p.name);
                s.m[j] = beta1_ * s.m[j] + (1.0 - beta1_) * g[j];
                s.v[j] = beta2_ * s.v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = s.m[j] / bc1;
                const double vhat = s.v[j] / bc2;
                p.value.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };

    double lr_, beta1_, beta2_, eps_;
    long step_ = 0;
    std::unordered_map<Param*, Slot> slots_;
};

}  // namespace doseml
