#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cmi/attacks.hpp"
#include "cmi/data.hpp"

using namespace cmi;
using nn::Tensor;

namespace {

nn::MLPModel random_model(std::uint64_t seed) { return nn::MLPModel::init(std::vector<std::size_t>{3, 8, 3}, seed); }

Tensor unit_inputs(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor x(n, d);
    for (double& v : x.values()) v = u(rng);
    // a few coordinates on the box boundary
    x[0] = 0.0;
    x[1] = 1.0;
    return x;
}

void expect_feasible(const Tensor& adv, const Tensor& x, double b) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_LE(std::abs(adv[i] - x[i]), b) << "coordinate " << i;
        ASSERT_GE(adv[i], 0.0);
        ASSERT_LE(adv[i], 1.0);
    }
}

LabelVector labels_for(std::size_t n, std::size_t c) {
    std::vector<std::size_t> y;
    for (std::size_t j = 0; j < n; ++j) y.push_back(j % c);
    return LabelVector(y, c);
}

}  // namespace

TEST(Fgsm, ZeroBudgetIsIdentity) {
    std::mt19937_64 rng(1);
    const Tensor x = unit_inputs(5, 3, rng);
    EXPECT_EQ(attack::fgsm(random_model(1), x, labels_for(5, 3), 0.0), x);
}

TEST(Fgsm, RespectsBudgetAndClip) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        const Tensor x = unit_inputs(10, 3, rng);
        const double b = 0.05 * (1 + t % 7);
        const Tensor adv = attack::fgsm(random_model(t), x, labels_for(10, 3), b);
        expect_feasible(adv, x, b);
    }
}

// One input, two logits z = (w x, 0) with w > 0 and true class 0:
// dH/dx = -(1 - p0) w < 0, so the attack moves x down.
TEST(Fgsm, LinearModelHandGradient) {
    nn::MLPModel m;
    m.layers.push_back({Tensor(1, 2, {2.0, 0.0}), Tensor(1, 2)});
    const Tensor x(1, 1, {0.5});
    const LabelVector y({0}, 2);
    const Tensor g = attack::input_gradient(m, x, y);
    const double p0 = 1.0 / (1.0 + std::exp(-1.0));
    EXPECT_NEAR(g[0], -(1.0 - p0) * 2.0, 1e-12);
    EXPECT_DOUBLE_EQ(attack::fgsm(m, x, y, 0.1)[0], 0.4);
    EXPECT_DOUBLE_EQ(attack::fgsm(m, x, LabelVector({1}, 2), 0.1)[0], 0.6);
}

TEST(Pgd, SingleStepFromCleanInputEqualsFgsm) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const Tensor x = unit_inputs(8, 3, rng);
        const auto m = random_model(100 + t);
        const auto y = labels_for(8, 3);
        attack::AttackConfig cfg;
        cfg.budget = 0.2;
        cfg.iterations = 1;
        cfg.step_size = 0.3;
        cfg.random_start = false;
        EXPECT_EQ(attack::pgd(m, x, y, cfg), attack::fgsm(m, x, y, 0.2));
    }
}

TEST(Pgd, ProjectionInvariantAndDeterminism) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        const Tensor x = unit_inputs(8, 3, rng);
        const auto m = random_model(200 + t);
        attack::AttackConfig cfg;
        cfg.budget = 0.1 + 0.03 * t;
        const Tensor a = attack::pgd(m, x, labels_for(8, 3), cfg, 9);
        expect_feasible(a, x, cfg.budget);
        EXPECT_EQ(a, attack::pgd(m, x, labels_for(8, 3), cfg, 9));
    }
    attack::AttackConfig zero;
    const Tensor x = unit_inputs(2, 3, rng);
    EXPECT_EQ(attack::pgd(random_model(0), x, labels_for(2, 3), zero), x);
    EXPECT_EQ(attack::AttackConfig{}.iterations, 5);
    zero.iterations = 0;
    EXPECT_THROW(attack::pgd(random_model(0), x, labels_for(2, 3), zero), InvalidInput);
}

TEST(RobustCurve, CleanAtZeroAndSevenBudgets) {
    auto d = data::gen_blobs(3, 10, 3, 0.3, 5);
    data::apply_stats(d, data::fit_minmax(d.features));
    const auto m = random_model(7);
    const std::vector<double> zero{0.0};
    const auto clean = attack::robust_accuracy_curve(m, d, zero, attack::Kind::FGSM);
    EXPECT_EQ(clean[0].accuracy, attack::top1_accuracy(m, d.features, d.labels));

    const std::vector<double> budgets{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35};
    const auto curve = attack::robust_accuracy_curve(m, d, budgets, attack::Kind::PGD);
    EXPECT_EQ(curve.size(), 7u);
    const std::string csv = attack::curve_csv(curve);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
    EXPECT_EQ(csv.rfind("budget,accuracy\n0.05,", 0), 0u);
    const std::vector<double> unsorted{0.2, 0.1};
    EXPECT_THROW(attack::robust_accuracy_curve(m, d, unsorted, attack::Kind::FGSM), InvalidInput);
}

// On a linear binary model the worst case in the ball is reached by the
// gradient sign, so accuracy cannot increase with the budget.
TEST(RobustCurve, MonotoneOnLinearModel) {
    auto d = data::gen_blobs(2, 40, 2, 0.5, 11);
    data::apply_stats(d, data::fit_minmax(d.features));
    nn::MLPModel m;
    m.layers.push_back({Tensor(2, 2, {3.0, -3.0, -2.0, 2.0}), Tensor(1, 2, {0.1, -0.1})});
    attack::AttackConfig base;
    std::vector<double> budgets;
    for (int k = 0; k <= 10; ++k) budgets.push_back(0.04 * k);
    const auto curve = attack::robust_accuracy_curve(m, d, budgets, attack::Kind::PGD, base, 3);
    for (std::size_t k = 1; k < curve.size(); ++k) EXPECT_LE(curve[k].accuracy, curve[k - 1].accuracy);
}
