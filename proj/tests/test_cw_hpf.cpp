#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "forgeloc/cw_hpf.hpp"
#include "forgeloc/data.hpp"
#include "forgeloc/training.hpp"
#include "support/gradcheck.hpp"

using namespace forgeloc;
using forgeloc::testing::random_tensor;

#ifndef FORGELOC_DATA_DIR
#error "FORGELOC_DATA_DIR must point at the repository's data directory"
#endif

namespace {

constexpr std::size_t K = kHpfKernelSize;

// Direct 5x5 cross-correlation with edge replication, straight from the
// definition: y[p] = sum_i f_i x[clamp(p + i)].
Tensor<double> reference_filter(const Tensor<double>& x, const HpfCoefficients& f) {
    const Shape s = x.shape();
    Tensor<double> y(s);
    const long r = K / 2;
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (long i = 0; i < long(s.h); ++i)
                for (long j = 0; j < long(s.w); ++j) {
                    double acc = 0.0;
                    for (long a = -r; a <= r; ++a)
                        for (long b = -r; b <= r; ++b) {
                            const long y0 = std::clamp(i + a, 0L, long(s.h) - 1);
                            const long x0 = std::clamp(j + b, 0L, long(s.w) - 1);
                            acc += f[(a + r) * K + (b + r)] * x.at(n, c, y0, x0);
                        }
                    y.at(n, c, i, j) = acc;
                }
    return y;
}

struct FixtureKernel {
    std::string name;
    double divisor = 1.0;
    std::vector<double> numerators;
};

std::vector<FixtureKernel> read_fixture() {
    std::ifstream in(std::string(FORGELOC_DATA_DIR) + "/hpf_kernels.txt");
    if (!in) throw std::runtime_error("cannot open hpf_kernels.txt");
    std::vector<FixtureKernel> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "kernel") {
            out.emplace_back();
            ls >> out.back().name >> out.back().divisor;
            continue;
        }
        std::istringstream row(line);
        double v;
        while (row >> v) out.back().numerators.push_back(v);
    }
    return out;
}

}  // namespace

// ============================================================================
// Kernel bank
// ============================================================================

TEST(HpfKernelTest, EveryKernelSumsToZero) {
    // exact on the integer numerators; the scaled doubles carry rounding
    for (const auto& k : read_fixture()) {
        double acc = 0.0;
        for (double v : k.numerators) acc += v;
        EXPECT_EQ(acc, 0.0) << k.name;
    }
    for (const auto& k : srm_kernels()) {
        double acc = 0.0;
        for (double v : k) acc += v;
        EXPECT_NEAR(acc, 0.0, 1e-15);
    }
}

TEST(HpfKernelTest, MatchesTranscriptionFixture) {
    const auto fixture = read_fixture();
    ASSERT_EQ(fixture.size(), kHpfKernelCount);
    const char* names[] = {"KB", "KV", "first_order"};
    for (std::size_t k = 0; k < kHpfKernelCount; ++k) {
        EXPECT_EQ(fixture[k].name, names[k]);
        ASSERT_EQ(fixture[k].numerators.size(), K * K);
        for (std::size_t i = 0; i < K * K; ++i) {
            EXPECT_EQ(srm_kernels()[k][i], fixture[k].numerators[i] / fixture[k].divisor) << names[k] << " " << i;
        }
    }
}

TEST(HpfKernelTest, BankTensorIsConstant) {
    HpfKernelBank<float> bank;
    EXPECT_EQ(bank.filters().shape(), (Shape{3, 1, 5, 5}));
    EXPECT_FALSE(bank.filters().requires_grad());
    EXPECT_EQ(HpfKernelBank<float>::expanded_channels(4), 12u);
}

// ============================================================================
// hpf_conv
// ============================================================================

TEST(HpfConvTest, ConstantInputGivesZero) {
    HpfKernelBank<double> bank;
    Tensor<double> x(Shape{1, 1, 9, 7}, 0.6180339);
    Tensor<double> y = hpf_conv(x, bank);
    ASSERT_EQ(y.shape(), (Shape{1, 3, 9, 7}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(HpfConvTest, ImpulseReproducesFlippedKernel) {
    HpfKernelBank<double> bank;
    Tensor<double> x(Shape{1, 1, 11, 11});
    x.at(0, 0, 5, 5) = 1.0;
    Tensor<double> y = hpf_conv(x, bank);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 11; ++i)
            for (std::size_t j = 0; j < 11; ++j) {
                const long di = long(i) - 5, dj = long(j) - 5;
                double expected = 0.0;
                if (std::abs(di) <= 2 && std::abs(dj) <= 2) {
                    // correlation of an impulse is the kernel rotated by 180 degrees
                    expected = srm_kernels()[k][(2 - di) * K + (2 - dj)];
                }
                EXPECT_NEAR(y.at(0, k, i, j), expected, 1e-15) << k << " " << i << "," << j;
            }
}

TEST(HpfConvTest, RampGivesConstantFirstOrderPlane) {
    HpfKernelBank<double> bank;
    Tensor<double> x(Shape{1, 1, 8, 10});
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 10; ++j) x.at(0, 0, i, j) = 0.25 * double(j) + 0.5 * double(i);
    Tensor<double> y = hpf_conv(x, bank);
    // away from the replicated right border the forward difference is the slope
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j + 1 < 10; ++j) EXPECT_NEAR(y.at(0, 2, i, j), 0.25, 1e-15);
}

TEST(HpfConvTest, MatchesDirectReference) {
    HpfKernelBank<double> bank;
    std::mt19937_64 rng(4);
    Tensor<double> x = random_tensor(Shape{2, 1, 7, 9}, rng);
    Tensor<double> y = hpf_conv(x, bank);
    for (std::size_t k = 0; k < 3; ++k) {
        Tensor<double> ref = reference_filter(x, srm_kernels()[k]);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 7; ++i)
                for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(y.at(n, k, i, j), ref.at(n, 0, i, j), 1e-13);
    }
}

TEST(HpfConvTest, RejectsMultiChannelInput) {
    HpfKernelBank<double> bank;
    EXPECT_THROW(hpf_conv(Tensor<double>(Shape{1, 2, 5, 5}), bank), ShapeError);
}

// ============================================================================
// cw_hpf
// ============================================================================

TEST(CwHpfTest, TriplesChannels) {
    HpfKernelBank<float> bank;
    EXPECT_EQ(cw_hpf(Tensor<float>(Shape{2, 2, 8, 8}), bank).shape(), (Shape{2, 6, 8, 8}));
    EXPECT_EQ(cw_hpf(Tensor<float>(Shape{1, 16, 4, 4}), bank).shape(), (Shape{1, 48, 4, 4}));
}

TEST(CwHpfTest, ChannelMajorOrder) {
    HpfKernelBank<double> bank;
    std::mt19937_64 rng(8);
    Tensor<double> x = random_tensor(Shape{1, 3, 6, 6}, rng);
    Tensor<double> y = cw_hpf(x, bank);
    for (std::size_t c = 0; c < 3; ++c) {
        Tensor<double> plane(Shape{1, 1, 6, 6});
        for (std::size_t p = 0; p < 36; ++p) plane.mutable_data()[p] = x.data()[c * 36 + p];
        Tensor<double> single = hpf_conv(plane, bank);
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t p = 0; p < 36; ++p) EXPECT_EQ(y.data()[(c * 3 + k) * 36 + p], single.data()[k * 36 + p]);
    }
}

TEST(CwHpfTest, SingleChannelEqualsHpfConvBitExactly) {
    HpfKernelBank<float> bank;
    Tensor<float> x(Shape{1, 1, 10, 12});
    for (std::size_t i = 0; i < x.numel(); ++i) x.mutable_data()[i] = std::sin(0.37f * float(i));
    Tensor<float> a = cw_hpf(x, bank);
    Tensor<float> b = hpf_conv(x, bank);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(CwHpfTest, ConstantInputGivesZeroEverywhere) {
    HpfKernelBank<float> bank;
    for (float c : {0.0f, 0.3f, 1.0f, -7.25f}) {
        Tensor<float> y = cw_hpf(Tensor<float>(Shape{2, 3, 9, 9}, c), bank);
        for (float v : y.data()) EXPECT_EQ(v, 0.0f);
    }
}

TEST(CwHpfTest, AddingAConstantChangesNothing) {
    // Dyadic values keep x + c exact in float, so the check can be bitwise.
    HpfKernelBank<float> bank;
    std::mt19937 rng(1);
    std::uniform_int_distribution<int> level(0, 255);
    Tensor<float> x(Shape{1, 3, 12, 12});
    for (auto& v : x.mutable_data()) v = float(level(rng)) / 256.0f;
    for (float c : {0.5f, -0.25f, 3.0f}) {
        Tensor<float> shifted = x.clone();
        for (auto& v : shifted.mutable_data()) v += c;
        Tensor<float> a = cw_hpf(x, bank);
        Tensor<float> b = cw_hpf(shifted, bank);
        for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    }
}

TEST(CwHpfTest, Linear) {
    HpfKernelBank<double> bank;
    std::mt19937_64 rng(12);
    Tensor<double> x = random_tensor(Shape{1, 2, 7, 7}, rng);
    Tensor<double> ax = mul_scalar(x, -3.5);
    Tensor<double> y = cw_hpf(x, bank);
    Tensor<double> ay = cw_hpf(ax, bank);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(ay.data()[i], -3.5 * y.data()[i], 1e-13);
}

TEST(CwHpfTest, InputGradientMatchesFiniteDifferences) {
    HpfKernelBank<double> bank;
    std::mt19937_64 rng(21);
    Tensor<double> x = random_tensor(Shape{1, 2, 6, 6}, rng);
    Tensor<double> proj = random_tensor(Shape{1, 6, 6, 6}, rng);
    auto f = [&] { return forgeloc::testing::weighted_sum(cw_hpf(x, bank), proj); };
    EXPECT_LT(forgeloc::testing::check_gradient(f, x).rel_error, 1e-4);
}

TEST(FrontEndTest, ChannelCounts) {
    EXPECT_EQ(front_end_channels(FrontEnd::rgb, 3), 3u);
    EXPECT_EQ(front_end_channels(FrontEnd::hpf, 3), 3u);
    EXPECT_EQ(front_end_channels(FrontEnd::cwhpf, 3), 9u);
    EXPECT_EQ(front_end_channels(FrontEnd::cwhpf, 16), 48u);
    EXPECT_EQ(front_end_from_string("cwhpf"), FrontEnd::cwhpf);
    EXPECT_THROW(front_end_from_string("srm"), std::invalid_argument);
}

TEST(FrontEndTest, PlainHpfSumsChannelResponses) {
    HpfKernelBank<double> bank;
    std::mt19937_64 rng(30);
    Tensor<double> x = random_tensor(Shape{1, 3, 6, 6}, rng);
    Tensor<double> cw = cw_hpf(x, bank);
    Tensor<double> plain = plain_hpf(x, bank);
    ASSERT_EQ(plain.shape(), (Shape{1, 3, 6, 6}));
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t p = 0; p < 36; ++p) {
            const double expected = cw.data()[(0 * 3 + k) * 36 + p] + cw.data()[(1 * 3 + k) * 36 + p] +
                                    cw.data()[(2 * 3 + k) * 36 + p];
            EXPECT_NEAR(plain.data()[k * 36 + p], expected, 1e-13);
        }
}

TEST(CwHpfTest, KernelsUntouchedByTraining) {
    ModelConfig cfg;
    cfg.nbf = 4;
    cfg.height = 16;
    cfg.width = 16;
    CoarseToFineModel<float> model(cfg, 3);
    const std::vector<float> before(model.kernel_bank().filters().data().begin(),
                                    model.kernel_bank().filters().data().end());
    SatConfig sat;
    sat.iterations = 100;
    sat.batch_size = 1;
    Trainer trainer(model, sat);
    ForgerySample s = generate_sample(ForgeryKind::splice, 16, 16, 5);
    std::vector<Example> data = {to_example(s)};
    trainer.run(data);
    EXPECT_EQ(trainer.state().iteration, 100u);
    const auto after = model.kernel_bank().filters().data();
    ASSERT_EQ(after.size(), before.size());
    EXPECT_EQ(std::memcmp(after.data(), before.data(), before.size() * sizeof(float)), 0);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < K * K; ++i) EXPECT_EQ(after[k * K * K + i], float(srm_kernels()[k][i]));
}
