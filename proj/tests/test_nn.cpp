#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cmi/checkpoint.hpp"
#include "cmi/nn.hpp"
#include "cmi/trainer.hpp"
#include "oracles.hpp"

using namespace cmi;
using nn::MLPModel;
using nn::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Tensor t(r, c);
    for (double& v : t.values()) v = u(rng);
    return t;
}

MLPModel random_model(std::vector<std::size_t> widths, std::mt19937_64& rng) {
    MLPModel m = MLPModel::init(widths, rng());
    for (auto& l : m.layers)
        for (double& b : l.bias.values()) b = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    return m;
}

}  // namespace

TEST(Forward, ZeroModelGivesUniformRows) {
    MLPModel m = MLPModel::init(std::vector<std::size_t>{3, 4, 5}, 1);
    for (auto& l : m.layers) std::fill(l.weight.values().begin(), l.weight.values().end(), 0.0);
    std::mt19937_64 rng(1);
    const ProbMatrix p = nn::predict_proba(m, random_tensor(6, 3, rng));
    for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p(j, i), 0.2);
}

TEST(Forward, IdentityLinearLayer) {
    MLPModel m;
    m.layers.push_back({Tensor(2, 2, {1, 0, 0, 1}), Tensor(1, 2)});
    nn::ForwardPass pass = nn::forward(m, Tensor(1, 2, {1, 0}));
    EXPECT_EQ(pass.tape.value(pass.logits), Tensor(1, 2, {1, 0}));
    EXPECT_THROW(nn::forward(m, Tensor(1, 3)), DimensionMismatch);
}

TEST(Forward, MatchesStraightLineImplementation) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const MLPModel m = random_model({4, 6, 5, 3}, rng);
        const Tensor x = random_tensor(9, 4, rng, 2.0);
        nn::ForwardPass pass = nn::forward(m, x);
        const auto expected = oracle::mlp_logits(m, x);
        const Tensor& got = pass.tape.value(pass.logits);
        for (std::size_t r = 0; r < 9; ++r)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(got(r, c), expected[r][c], 1e-12);
    }
}

TEST(Init, GlorotBoundsAndSeedDeterminism) {
    const std::vector<std::size_t> widths{10, 20, 3};
    const MLPModel a = MLPModel::init(widths, 42), b = MLPModel::init(widths, 42), c = MLPModel::init(widths, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    const double bound = std::sqrt(6.0 / 30.0);
    for (double w : a.layers[0].weight.values()) EXPECT_LE(std::abs(w), bound);
    for (double v : a.layers[1].bias.values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(a.parameter_count(), 10u * 20 + 20 + 20 * 3 + 3);
    EXPECT_THROW(MLPModel::init(std::vector<std::size_t>{3}, 0), InvalidInput);
}

TEST(Backward, SumOfParametersGivesOnes) {
    std::mt19937_64 rng(2);
    const MLPModel m = random_model({3, 4, 2}, rng);
    nn::ForwardPass pass = nn::forward(m, random_tensor(2, 3, rng));
    auto& t = pass.tape;
    nn::Var total = t.sum(pass.params[0].first);
    for (std::size_t l = 0; l < pass.params.size(); ++l) {
        if (l > 0) total = t.add(total, t.sum(pass.params[l].first));
        total = t.add(total, t.sum(pass.params[l].second));
    }
    const nn::Gradients g = nn::backward(pass, total);
    for (const auto& l : g.layers) {
        for (double v : l.weight.values()) EXPECT_EQ(v, 1.0);
        for (double v : l.bias.values()) EXPECT_EQ(v, 1.0);
    }
}

TEST(Backward, HalfSquaredNormGivesParameters) {
    std::mt19937_64 rng(3);
    const MLPModel m = random_model({3, 4, 2}, rng);
    nn::ForwardPass pass = nn::forward(m, random_tensor(2, 3, rng));
    auto& t = pass.tape;
    nn::Var total = t.constant(Tensor::scalar(0.0));
    for (const auto& [w, b] : pass.params) {
        total = t.add(total, t.scale(t.sum(t.mul(w, w)), 0.5));
        total = t.add(total, t.scale(t.sum(t.mul(b, b)), 0.5));
    }
    const nn::Gradients g = nn::backward(pass, total);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        for (std::size_t i = 0; i < m.layers[l].weight.size(); ++i)
            EXPECT_NEAR(g.layers[l].weight[i], m.layers[l].weight[i], 1e-15);
        for (std::size_t i = 0; i < m.layers[l].bias.size(); ++i)
            EXPECT_NEAR(g.layers[l].bias[i], m.layers[l].bias[i], 1e-15);
    }
}

TEST(Backward, NonScalarLossRejected) {
    nn::Tape t;
    const nn::Var a = t.leaf(Tensor(2, 2, 1.0));
    EXPECT_THROW(t.backward(a), InvalidInput);
}

TEST(Backward, NonFiniteValuesRejected) {
    nn::Tape t;
    EXPECT_THROW(t.leaf(Tensor(1, 1, NAN)), NumericalError);
}

TEST(Backward, DetachBlocksGradient) {
    nn::Tape t;
    const nn::Var a = t.leaf(Tensor(1, 2, {2.0, 3.0}));
    const nn::Var loss = t.sum(t.mul(a, t.detach(a)));
    t.backward(loss);
    EXPECT_EQ(t.grad(a), Tensor(1, 2, {2.0, 3.0}));
}

namespace {

double cmic_value(const MLPModel& m, const Tensor& x, const LabelVector& y, const train::QState& q, double lambda,
                  double beta) {
    nn::ForwardPass pass = nn::forward(m, x);
    const nn::Var p = pass.tape.softmax_rows(pass.logits);
    return pass.tape.value(train::cmic_loss(pass.tape, p, y, q, lambda, beta).total)[0];
}

}  // namespace

TEST(Backward, CmicLossMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    const std::size_t classes = 3;
    for (int run = 0; run < 5; ++run) {
        const MLPModel m = random_model({4, 5, classes}, rng);
        const Tensor x = random_tensor(8, 4, rng);
        std::vector<std::size_t> labels;
        for (std::size_t j = 0; j < 8; ++j) labels.push_back(j % classes);
        const LabelVector y(labels, classes);
        train::QState q;
        for (std::size_t c = 0; c < classes; ++c) q.q.emplace_back(oracle::random_row(classes, rng, 1.0, 0.1));

        nn::ForwardPass pass = nn::forward(m, x);
        const nn::Var p = pass.tape.softmax_rows(pass.logits);
        const auto terms = train::cmic_loss(pass.tape, p, y, q, 0.7, 0.4);
        const nn::Gradients g = nn::backward(pass, terms.total);

        for (std::size_t k = 0; k < m.parameter_count(); ++k) {
            MLPModel plus = m, minus = m;
            oracle::param(plus, k) += 1e-5;
            oracle::param(minus, k) -= 1e-5;
            const double numeric =
                (cmic_value(plus, x, y, q, 0.7, 0.4) - cmic_value(minus, x, y, q, 0.7, 0.4)) / 2e-5;
            const double analytic = oracle::grad_at(g, k);
            if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) continue;
            EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-6) << "parameter " << k;
        }
    }
}

TEST(Sgd, PlainStepAndNoOp) {
    std::mt19937_64 rng(5);
    MLPModel m = random_model({2, 3}, rng);
    const MLPModel before = m;
    auto state = nn::OptimizerState::for_model(m, 0.5, 0.0, 0.0);
    nn::Gradients g = nn::Gradients::zeros_like(m);
    nn::sgd_step(m, g, state);
    EXPECT_EQ(m, before);

    for (double& v : g.layers[0].weight.values()) v = 1.0;
    nn::sgd_step(m, g, state);
    for (std::size_t i = 0; i < m.layers[0].weight.size(); ++i)
        EXPECT_DOUBLE_EQ(m.layers[0].weight[i], before.layers[0].weight[i] - 0.5);
}

TEST(Sgd, TwoMomentumStepsMatchUnrolledRecurrence) {
    MLPModel m;
    m.layers.push_back({Tensor(1, 1, {2.0}), Tensor(1, 1, {-1.0})});
    auto state = nn::OptimizerState::for_model(m, 0.1, 0.9, 0.01);
    nn::Gradients g = nn::Gradients::zeros_like(m);
    g.layers[0].weight[0] = 0.5;
    g.layers[0].bias[0] = -0.25;

    double w = 2.0, vw = 0.0, b = -1.0, vb = 0.0;
    for (int step = 0; step < 2; ++step) {
        vw = 0.9 * vw + (0.5 + 0.01 * w);
        w -= 0.1 * vw;
        vb = 0.9 * vb + (-0.25 + 0.01 * b);
        b -= 0.1 * vb;
        nn::sgd_step(m, g, state);
    }
    EXPECT_NEAR(m.layers[0].weight[0], w, 1e-12);
    EXPECT_NEAR(m.layers[0].bias[0], b, 1e-12);
    EXPECT_NEAR(state.velocity.layers[0].weight[0], vw, 1e-12);
}

TEST(Schedule, MilestonesAndEveryEpoch) {
    MLPModel m = MLPModel::init(std::vector<std::size_t>{2, 2}, 0);
    auto s = nn::OptimizerState::for_model(m, 0.1, 0.9, 0.0, {{60, 120, 160}, 0.1, false});
    nn::schedule_step(s, 59);
    EXPECT_DOUBLE_EQ(s.lr, 0.1);
    nn::schedule_step(s, 60);
    EXPECT_NEAR(s.lr, 0.01, 1e-15);
    nn::schedule_step(s, 60);  // idempotent
    EXPECT_NEAR(s.lr, 0.01, 1e-15);

    auto e = nn::OptimizerState::for_model(m, 1.0, 0.9, 0.0, {{}, 0.7, true});
    for (int t = 1; t <= 3; ++t) nn::schedule_step(e, t);
    EXPECT_NEAR(e.lr, 0.7 * 0.7 * 0.7, 1e-15);
    EXPECT_THROW(nn::schedule_step(e, -1), InvalidInput);
}

TEST(Checkpoint, RoundTripsExactly) {
    train::TrainConfig cfg;
    cfg.hidden = {4};
    train::TrainState s = train::init_state(cfg, 3, 3);
    s.q.q[1] = ProbVector{0.1, 0.2, 0.7};
    s.epoch = 7;
    const Checkpoint ck = make_checkpoint(s, true);
    const Checkpoint back = parse_checkpoint(checkpoint_json(ck));
    EXPECT_EQ(back.model, s.model);
    EXPECT_EQ(back.optimizer, s.optimizer);
    ASSERT_EQ(back.q.size(), 3u);
    EXPECT_EQ(back.q[1], (std::vector<double>{0.1, 0.2, 0.7}));
    EXPECT_EQ(back.epoch, 7);
    EXPECT_TRUE(make_checkpoint(s, false).q.empty());
    EXPECT_THROW(parse_checkpoint("{\"format\": \"cmi-checkpoint\", \"version\": 99}"), FormatError);
    EXPECT_THROW(parse_checkpoint("not json"), FormatError);
}
