#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cmi/error.hpp"
#include "cmi/numerics.hpp"
#include "oracles.hpp"

using namespace cmi;

namespace {
const double kLn2 = std::numbers::ln2;
}

TEST(ProbVector, ValidatesEntries) {
    EXPECT_NO_THROW(ProbVector({0.25, 0.75}));
    EXPECT_THROW(ProbVector({1.0}), InvalidInput);
    EXPECT_THROW(ProbVector({0.5, 0.6}), InvalidInput);
    EXPECT_THROW(ProbVector({-0.1, 1.1}), InvalidInput);
    EXPECT_THROW(ProbVector({NAN, 1.0}), InvalidInput);
    EXPECT_NEAR(ProbVector::uniform(4)[3], 0.25, 0.0);
}

TEST(ProbMatrix, RejectsRaggedOrNonStochasticRows) {
    EXPECT_THROW(ProbMatrix(std::vector<std::vector<double>>{{0.5, 0.5}, {1.0, 0.0, 0.0}}), DimensionMismatch);
    EXPECT_THROW(ProbMatrix(std::vector<std::vector<double>>{{0.5, 0.4}}), InvalidInput);
    EXPECT_THROW(ProbMatrix(std::vector<std::vector<double>>{}), InvalidInput);
    EXPECT_THROW(LabelVector({0, 2}, 2), InvalidInput);
}

TEST(Softmax, HandValues) {
    const auto a = softmax(std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(a[0], 0.5);
    const auto b = softmax(std::vector<double>{kLn2, 0.0});
    EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
    const auto c = softmax(std::vector<double>{1000.0, 0.0});
    EXPECT_DOUBLE_EQ(c[0], 1.0);
    EXPECT_GE(c[1], 0.0);
    EXPECT_LT(c[1], 1e-300);
    EXPECT_THROW(softmax(std::vector<double>{INFINITY, 0.0}), InvalidInput);
}

TEST(Softmax, ShiftInvariantAndNormalizedOnRandomLogits) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> z(2 + t % 6), z2;
        for (double& v : z) v = u(rng);
        for (double v : z) z2.push_back(v + 123.0);
        const auto p = softmax(z), q = softmax(z2);
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            s += p[i];
            EXPECT_NEAR(p[i], q[i], 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(ClampLog, Floor) {
    EXPECT_EQ(clamp_log(1.0), 0.0);
    EXPECT_NEAR(clamp_log(0.0), -27.631021115928547, 1e-12);
    EXPECT_NEAR(clamp_log(0.5), -0.6931471805599453, 1e-15);
    EXPECT_EQ(clamp_log(1e-20), clamp_log(0.0));
}

TEST(CrossEntropy, HandValues) {
    EXPECT_NEAR(cross_entropy(ProbVector{0.5, 0.5}, ProbVector{0.5, 0.5}), kLn2, 1e-15);
    EXPECT_EQ(cross_entropy(ProbVector{1.0, 0.0}, ProbVector{1.0, 0.0}), 0.0);
    EXPECT_NEAR(cross_entropy(ProbVector{0.3, 0.7}, ProbVector{0.5, 0.5}), kLn2, 1e-15);
    EXPECT_THROW(cross_entropy(ProbVector{0.5, 0.5}, ProbVector{0.2, 0.3, 0.5}), DimensionMismatch);
}

TEST(CrossEntropyOneHot, HandValues) {
    EXPECT_EQ(cross_entropy_onehot(0, ProbVector{1.0, 0.0}), 0.0);
    EXPECT_NEAR(cross_entropy_onehot(0, ProbVector{0.5, 0.5}), kLn2, 1e-15);
    EXPECT_NEAR(cross_entropy_onehot(1, ProbVector{0.9, 0.1}), 2.302585092994046, 1e-12);
    EXPECT_THROW(cross_entropy_onehot(2, ProbVector{0.9, 0.1}), InvalidInput);
}

TEST(KlDivergence, HandValues) {
    const ProbVector p{0.2, 0.3, 0.5};
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_NEAR(kl_divergence(ProbVector{1.0, 0.0}, ProbVector{0.5, 0.5}), kLn2, 1e-15);
    EXPECT_NEAR(kl_divergence(ProbVector{0.5, 0.5}, ProbVector{0.25, 0.75}), 0.14384103622589045, 1e-12);
    EXPECT_THROW(kl_divergence(p, ProbVector{0.5, 0.5}), DimensionMismatch);
}

TEST(ShannonEntropy, HandValues) {
    EXPECT_EQ(shannon_entropy(ProbVector{0.0, 1.0, 0.0}), 0.0);
    EXPECT_NEAR(shannon_entropy(ProbVector::uniform(5)), std::log(5.0), 1e-15);
    EXPECT_NEAR(shannon_entropy(ProbVector{0.25, 0.75}), 0.5623351446188083, 1e-12);
}

// Gibbs' inequality and H(p, q) = H(p) + D(p || q), on strictly positive rows.
TEST(Divergences, GibbsAndDecomposition) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 500; ++t) {
        const std::size_t c = 2 + t % 7;
        const ProbVector p(oracle::random_row(c, rng, 0.5, 1e-6));
        const ProbVector q(oracle::random_row(c, rng, 0.5, 1e-6));
        EXPECT_GE(kl_divergence(p, q), 0.0);
        EXPECT_GE(cross_entropy(p, q), 0.0);
        EXPECT_NEAR(cross_entropy(p, q), shannon_entropy(p) + kl_divergence(p, q), 1e-12);
        EXPECT_NEAR(kl_divergence(p, q), oracle::d(std::vector<double>(p.values().begin(), p.values().end()),
                                                   std::vector<double>(q.values().begin(), q.values().end())),
                    1e-12);
    }
}
