#include <catch2/catch_amalgamated.hpp>

#include "doseml/core/adam.hpp"

using namespace doseml;
using Catch::Approx;

namespace {

ParamPtr param_of(const std::string& name, std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return make_param(name, Tensor({n}, std::move(values)));
}

}  // namespace

TEST_CASE("a zero gradient leaves the parameter unchanged") {
    auto p = param_of("w", {1.5, -2.0});
    const std::vector<double> g{0.0, 0.0};
    Adam opt(0.1);
    opt.step({p}, {&g});
    CHECK(p->value.data == std::vector<double>{1.5, -2.0});
}

TEST_CASE("the first step with unit gradient moves by the learning rate") {
    // With bias correction, m_hat = g and v_hat = g^2 after step one, so the
    // update is lr * g / (|g| + eps) ~= lr for g = 1.
    auto p = param_of("w", {0.0});
    const std::vector<double> g{1.0};
    Adam opt(0.01);
    opt.step({p}, {&g});
    CHECK(p->value.data[0] == Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("repeated steps minimize a simple quadratic") {
    auto p = param_of("w", {0.0});
    Adam opt(0.1);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> g{2.0 * (p->value.data[0] - 3.0)};
        opt.step({p}, {&g});
    }
    CHECK(std::abs(p->value.data[0] - 3.0) < 0.1);
    CHECK(opt.step_count() == 100);
}

TEST_CASE("a non-finite gradient raises a divergence error naming the parameter") {
    auto p = param_of("enc.conv1.w", {1.0});
    const std::vector<double> g{std::numeric_limits<double>::quiet_NaN()};
    Adam opt(0.1);
    CHECK_THROWS_MATCHES(opt.step({p}, {&g}), DivergenceError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("enc.conv1.w")));
}
