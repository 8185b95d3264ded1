#pragma once

// White-box L-infinity gradient-sign attacks (FGSM, PGD) on the one-hot
// cross entropy of an MLP, and robust-accuracy curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmi/data.hpp"
#include "cmi/error.hpp"
#include "cmi/metrics.hpp"
#include "cmi/nn.hpp"

namespace cmi::attack {

enum class Kind { FGSM, PGD };

inline Kind parse_kind(std::string_view s) {
    if (s == "fgsm") return Kind::FGSM;
    if (s == "pgd") return Kind::PGD;
    throw InvalidInput("unknown attack '" + std::string(s) + "' (expected fgsm or pgd)");
}

struct AttackConfig {
    double budget = 0.0;
    int iterations = 5;
    double step_size = 0.0;  // 0 selects 2.5 * budget / iterations
    bool random_start = true;
    double clip_lo = 0.0;
    double clip_hi = 1.0;

    double effective_step() const {
        return step_size > 0.0 ? step_size : 2.5 * budget / static_cast<double>(iterations);
    }

    void validate() const {
        if (!(budget >= 0.0)) throw InvalidInput("attack budget must be non-negative");
        if (iterations < 1) throw InvalidInput("attack iterations must be at least 1");
        if (step_size < 0.0) throw InvalidInput("attack step size must be positive");
        if (!(clip_lo <= clip_hi)) throw InvalidInput("empty clip range");
    }
};

/// Sum over rows of H(y_j, softmax(f(x_j))) and its gradient with respect
/// to the inputs. Rows do not interact, so row j of the gradient is the
/// gradient of sample j's own loss.
inline nn::Tensor input_gradient(const nn::MLPModel& model, const nn::Tensor& x, const LabelVector& y) {
    if (x.rows() != y.size()) throw DimensionMismatch("attack label count", x.rows(), y.size());
    nn::ForwardPass pass = nn::forward(model, x, /*input_requires_grad=*/true);
    auto& t = pass.tape;
    nn::Tensor onehot(y.size(), model.output_dim());
    for (std::size_t j = 0; j < y.size(); ++j) onehot(j, y[j]) = 1.0;
    const nn::Var loss = t.scale(t.sum(t.mul(t.constant(std::move(onehot)), t.clamp_log(t.softmax_rows(pass.logits)))), -1.0);
    t.backward(loss);
    const nn::Tensor& g = t.grad(pass.input);
    if (!g.all_finite()) throw NumericalError("attack: non-finite input gradient");
    return g;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Feasible interval [max(x - b, lo), min(x + b, hi)], tightened by ulps so
// that |v - x| <= b holds in floating point for every v inside it.
inline std::pair<double, double> feasible(double x, double b, double lo, double hi) {
    double a = std::max(x - b, lo);
    double z = std::min(x + b, hi);
    while (x - a > b) a = std::nextafter(a, x);
    while (z - x > b) z = std::nextafter(z, x);
    return {std::min(a, z), z};
}

inline void project(nn::Tensor& adv, const nn::Tensor& x, const AttackConfig& cfg) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto [a, z] = feasible(x[i], cfg.budget, cfg.clip_lo, cfg.clip_hi);
        adv[i] = std::clamp(adv[i], a, z);
    }
}

}  // namespace detail

/// x' = clip(x + budget * sign(grad_x H(y, P_x)), lo, hi), row by row.
inline nn::Tensor fgsm(const nn::MLPModel& model, const nn::Tensor& x, const LabelVector& y, double budget,
                       double clip_lo = 0.0, double clip_hi = 1.0) {
    AttackConfig cfg{budget, 1, budget, false, clip_lo, clip_hi};
    cfg.validate();
    if (budget == 0.0) return x;
    const nn::Tensor g = input_gradient(model, x, y);
    nn::Tensor adv = x;
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += budget * detail::sign(g[i]);
    detail::project(adv, x, cfg);
    return adv;
}

/// Projected gradient-sign ascent inside the budget ball intersected with
/// the clip box, from a seeded uniform start in the ball (or from x).
inline nn::Tensor pgd(const nn::MLPModel& model, const nn::Tensor& x, const LabelVector& y, const AttackConfig& cfg,
                      std::uint64_t seed = 0) {
    cfg.validate();
    if (cfg.budget == 0.0) return x;
    nn::Tensor adv = x;
    if (cfg.random_start) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-cfg.budget, cfg.budget);
        for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += u(rng);
        detail::project(adv, x, cfg);
    }
    const double step = cfg.effective_step();
    for (int k = 0; k < cfg.iterations; ++k) {
        const nn::Tensor g = input_gradient(model, adv, y);
        for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += step * detail::sign(g[i]);
        detail::project(adv, x, cfg);
    }
    return adv;
}

inline double top1_accuracy(const nn::MLPModel& model, const nn::Tensor& x, const LabelVector& y) {
    const ProbMatrix p = nn::predict_proba(model, x);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < p.rows(); ++j)
        if (argmax(p.row(j)) == y[j]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(p.rows());
}

struct CurvePoint {
    double budget = 0.0;
    double accuracy = 0.0;
};

/// Top-1 accuracy on attacked inputs for each budget (ascending). `base`
/// supplies iterations/step/start/clip for PGD; its budget is overridden.
inline std::vector<CurvePoint> robust_accuracy_curve(const nn::MLPModel& model, const data::Dataset& d,
                                                     std::span<const double> budgets, Kind kind,
                                                     AttackConfig base = {}, std::uint64_t seed = 0) {
    if (!std::is_sorted(budgets.begin(), budgets.end())) throw InvalidInput("budgets must be sorted ascending");
    std::vector<CurvePoint> out;
    for (double b : budgets) {
        AttackConfig cfg = base;
        cfg.budget = b;
        const nn::Tensor adv = kind == Kind::FGSM ? fgsm(model, d.features, d.labels, b, cfg.clip_lo, cfg.clip_hi)
                                                  : pgd(model, d.features, d.labels, cfg, seed);
        out.push_back({b, top1_accuracy(model, adv, d.labels)});
    }
    return out;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
    std::string out = "budget,accuracy\n";
    for (const auto& p : curve) out += io::format_double(p.budget) + ',' + io::format_double(p.accuracy) + '\n';
    return out;
}

}  // namespace cmi::attack
