#include <gtest/gtest.h>

#include "support/gradient_suite.hpp"

using namespace forgeloc;
using namespace forgeloc::testing;

TEST(GradientTest, EveryOpMatchesCentralDifferences) {
    for (const SuiteResult& r : run_op_gradient_suite(20)) {
        EXPECT_EQ(r.trials, 20u) << r.name;
        EXPECT_LT(r.worst, 1e-4) << r.name;
    }
}

TEST(GradientTest, EndToEndModelMatchesCentralDifferences) {
    const auto checks = run_model_gradient_check(1);
    EXPECT_EQ(checks.front().second.checked, 3u * 16 * 16);
    for (const auto& [name, c] : checks) EXPECT_LT(c.rel_error, 1e-4) << name;
}

TEST(GradientTest, CheckerDetectsAWrongGradient) {
    // sanity check of the checker itself: a loss whose recorded graph differs
    // from the evaluated function must fail
    Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.1, 0.2, 0.3});
    bool first = true;
    auto f = [&] {
        if (first) {
            first = false;
            return sum(mul_scalar(x, 2.0));
        }
        return sum(x);
    };
    EXPECT_GT(check_gradient(f, x).rel_error, 0.5);
}
