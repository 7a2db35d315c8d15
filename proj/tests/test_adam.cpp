#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "forgeloc/adam.hpp"

using namespace forgeloc;

namespace {

ParameterList<double> single(Tensor<double> t) {
    t.set_requires_grad(true);
    return {{"p", t}};
}

}  // namespace

TEST(AdamTest, DefaultLearningRate) {
    EXPECT_DOUBLE_EQ(AdamOptions{}.lr, 0.002);
    Adam<float> adam({});
    EXPECT_DOUBLE_EQ(adam.options().lr, 0.002);
}

TEST(AdamTest, ZeroGradientLeavesParameterUnchanged) {
    Tensor<double> w(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -1.0, 2.0});
    Adam<double> adam(single(w));
    w.zero_grad();
    for (int i = 0; i < 5; ++i) adam.step();
    EXPECT_EQ(w.data()[0], 0.5);
    EXPECT_EQ(w.data()[1], -1.0);
    EXPECT_EQ(w.data()[2], 2.0);
    EXPECT_EQ(adam.step_count(), 5u);
}

TEST(AdamTest, FirstStepMatchesHandFormula) {
    Tensor<double> w(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -1.0, 2.0});
    Adam<double> adam(single(w));
    const std::vector<double> g = {0.3, -4.0, 1e-3};
    for (std::size_t i = 0; i < 3; ++i) w.mutable_grad()[i] = g[i];
    adam.step();
    const std::vector<double> before = {0.5, -1.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        // m = 0.1 g, v = 0.001 g^2; bias correction restores g and g^2
        const double m = 0.1 * g[i] / (1.0 - 0.9);
        const double v = 0.001 * g[i] * g[i] / (1.0 - 0.999);
        const double expected = before[i] - 0.002 * m / (std::sqrt(v) + 1e-8);
        EXPECT_NEAR(w.data()[i], expected, 1e-15);
        EXPECT_NEAR(std::abs(w.data()[i] - before[i]), 0.002, 2e-5);
    }
}

TEST(AdamTest, SecondStepMatchesHandFormula) {
    Tensor<double> w(Shape{1, 1, 1, 1}, 1.0);
    Adam<double> adam(single(w), AdamOptions{0.01, 0.8, 0.9, 1e-8});
    w.mutable_grad()[0] = 2.0;
    adam.step();
    w.mutable_grad()[0] = -1.0;
    adam.step();
    double m = 0.0, v = 0.0, x = 1.0;
    const double gs[2] = {2.0, -1.0};
    for (int t = 1; t <= 2; ++t) {
        m = 0.8 * m + 0.2 * gs[t - 1];
        v = 0.9 * v + 0.1 * gs[t - 1] * gs[t - 1];
        x -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-8);
    }
    EXPECT_NEAR(w.data()[0], x, 1e-15);
    EXPECT_NEAR(adam.first_moments()[0][0], m, 1e-15);
    EXPECT_NEAR(adam.second_moments()[0][0], v, 1e-15);
}

TEST(AdamTest, NonFiniteGradientRejectedBeforeAnyUpdate) {
    Tensor<double> a(Shape{1, 1, 1, 2}, 1.0);
    Tensor<double> b(Shape{1, 1, 1, 2}, 1.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Adam<double> adam({{"a", a}, {"b", b}});
    a.mutable_grad()[0] = 1.0;
    b.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
    try {
        adam.step();
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
    }
    EXPECT_EQ(a.data()[0], 1.0);
    EXPECT_EQ(adam.step_count(), 0u);
}

TEST(AdamTest, StepCountIncrementsByOne) {
    Tensor<double> w(Shape{1, 1, 1, 1}, 0.0);
    Adam<double> adam(single(w));
    for (std::uint64_t i = 1; i <= 3; ++i) {
        w.mutable_grad()[0] = 1.0;
        adam.step();
        EXPECT_EQ(adam.step_count(), i);
    }
}

TEST(AdamTest, ZeroGradClearsParameterGradients) {
    Tensor<double> w(Shape{1, 1, 1, 2}, 0.0);
    Adam<double> adam(single(w));
    w.mutable_grad()[0] = 3.0;
    adam.zero_grad();
    EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(AdamTest, RestoreReproducesTrajectory) {
    auto run = [](Adam<double>& adam, Tensor<double>& w, int steps) {
        for (int i = 0; i < steps; ++i) {
            w.mutable_grad()[0] = std::sin(1.0 + adam.step_count());
            adam.step();
        }
    };
    Tensor<double> w1(Shape{1, 1, 1, 1}, 0.25);
    Adam<double> a1(single(w1));
    run(a1, w1, 6);

    Tensor<double> w2(Shape{1, 1, 1, 1}, 0.25);
    Adam<double> a2(single(w2));
    run(a2, w2, 3);
    Tensor<double> w3(Shape{1, 1, 1, 1}, w2.data()[0]);
    Adam<double> a3(single(w3));
    a3.restore(a2.step_count(), a2.first_moments(), a2.second_moments());
    run(a3, w3, 3);
    EXPECT_EQ(w3.data()[0], w1.data()[0]);
}

TEST(AdamTest, RestoreRejectsWrongSizes) {
    Tensor<double> w(Shape{1, 1, 1, 2}, 0.0);
    Adam<double> adam(single(w));
    EXPECT_THROW(adam.restore(1, {{0.0}}, {{0.0}}), std::invalid_argument);
    EXPECT_THROW(adam.restore(1, {}, {}), std::invalid_argument);
}

TEST(AdamTest, NonPositiveLearningRateRejected) {
    EXPECT_THROW(Adam<double>({}, AdamOptions{0.0}), std::invalid_argument);
}
