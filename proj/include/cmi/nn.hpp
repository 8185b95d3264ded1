#pragma once

// Dense 2-D tensors, a tape-based reverse-mode differentiator, a ReLU MLP
// classifier and SGD with momentum, coupled weight decay and step schedules.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmi/error.hpp"
#include "cmi/numerics.hpp"

namespace cmi::nn {

/// Row-major matrix of doubles. A scalar is a 1x1 tensor.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) {
            throw DimensionMismatch("tensor value count", rows_ * cols_, values_.size());
        }
    }

    static Tensor scalar(double v) { return Tensor(1, 1, v); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * cols_, cols_);
    }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

struct Var {
    std::size_t id = 0;
};

/// Records operations on 2-D tensors and replays them backwards.
/// Values are checked for finiteness after every operation.
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = true) {
        guard(value, "leaf");
        return push(std::move(value), requires_grad, {});
    }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b) {
        const Tensor& x = value(a);
        const Tensor& y = value(b);
        if (x.cols() != y.rows()) throw DimensionMismatch("matmul inner dimension", x.cols(), y.rows());
        Tensor out(x.rows(), y.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t k = 0; k < x.cols(); ++k) {
                const double xik = x(i, k);
                for (std::size_t j = 0; j < y.cols(); ++j) out(i, j) += xik * y(k, j);
            }
        }
        return record(std::move(out), "matmul", {a, b}, [a, b](Tape& t, const Tensor& g) {
            const Tensor& x = t.value(a);
            const Tensor& y = t.value(b);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_mut(a);
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t k = 0; k < x.cols(); ++k) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < y.cols(); ++j) s += g(i, j) * y(k, j);
                        ga(i, k) += s;
                    }
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t k = 0; k < x.cols(); ++k) {
                        const double xik = x(i, k);
                        for (std::size_t j = 0; j < y.cols(); ++j) gb(k, j) += xik * g(i, j);
                    }
            }
        });
    }

    /// a (N x K) plus a broadcast 1 x K row.
    Var add_row(Var a, Var row) {
        const Tensor& x = value(a);
        const Tensor& r = value(row);
        if (r.rows() != 1 || r.cols() != x.cols()) throw DimensionMismatch("bias width", x.cols(), r.cols());
        Tensor out = x;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += r(0, j);
        return record(std::move(out), "add_row", {a, row}, [a, row](Tape& t, const Tensor& g) {
            if (t.requires_grad(a)) accumulate(t.grad_mut(a), g);
            if (t.requires_grad(row)) {
                Tensor& gr = t.grad_mut(row);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
            }
        });
    }

    Var relu(Var a) {
        Tensor out = value(a);
        for (double& v : out.values()) v = std::max(v, 0.0);
        return record(std::move(out), "relu", {a}, [a](Tape& t, const Tensor& g) {
            const Tensor& x = t.value(a);
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) ga[i] += g[i];
        });
    }

    /// Row-wise max-shifted softmax.
    Var softmax_rows(Var a) {
        const Tensor& x = value(a);
        Tensor out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto r = x.row(i);
            const double peak = *std::max_element(r.begin(), r.end());
            double total = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) total += out(i, j) = std::exp(r[j] - peak);
            for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= total;
        }
        const std::size_t self = nodes_.size();
        return record(std::move(out), "softmax_rows", {a}, [a, self](Tape& t, const Tensor& g) {
            const Tensor& p = t.nodes_[self].value;
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < p.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
                for (std::size_t j = 0; j < p.cols(); ++j) ga(i, j) += p(i, j) * (g(i, j) - dot);
            }
        });
    }

    /// Elementwise ln(max(x, kProbFloor)); zero derivative below the floor.
    Var clamp_log(Var a) {
        Tensor out = value(a);
        for (double& v : out.values()) v = cmi::clamp_log(v);
        return record(std::move(out), "clamp_log", {a}, [a](Tape& t, const Tensor& g) {
            const Tensor& x = t.value(a);
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > kProbFloor) ga[i] += g[i] / x[i];
        });
    }

    Var mul(Var a, Var b) {
        same_shape(a, b, "mul");
        Tensor out = value(a);
        const Tensor& y = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
        return record(std::move(out), "mul", {a, b}, [a, b](Tape& t, const Tensor& g) {
            const Tensor& x = t.value(a);
            const Tensor& y = t.value(b);
            if (t.requires_grad(a)) {
                Tensor& ga = t.grad_mut(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }

    Var add(Var a, Var b) { return combine(a, b, 1.0, "add"); }
    Var sub(Var a, Var b) { return combine(a, b, -1.0, "sub"); }

    Var scale(Var a, double s) {
        Tensor out = value(a);
        for (double& v : out.values()) v *= s;
        return record(std::move(out), "scale", {a}, [a, s](Tape& t, const Tensor& g) {
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        });
    }

    /// Sum of all entries as a 1x1 tensor.
    Var sum(Var a) {
        double s = 0.0;
        for (double v : value(a).values()) s += v;
        return record(Tensor::scalar(s), "sum", {a}, [a](Tape& t, const Tensor& g) {
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        });
    }

    /// Same value, no gradient flow.
    Var detach(Var a) { return push(value(a), false, {}); }

    /// Reverse pass from a scalar node. Gradients of earlier backward calls are cleared.
    void backward(Var loss) {
        const Tensor& l = value(loss);
        if (l.rows() != 1 || l.cols() != 1) throw InvalidInput("backward: loss must be a 1x1 scalar");
        for (auto& n : nodes_) n.grad = Tensor(n.value.rows(), n.value.cols());
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.requires_grad || !n.backward) continue;
            // Copy: grad_mut on inputs may not alias this node's gradient.
            const Tensor g = n.grad;
            n.backward(*this, g);
        }
        for (const auto& n : nodes_) {
            if (n.requires_grad && !n.grad.all_finite()) {
                throw NumericalError("backward: non-finite gradient");
            }
        }
    }

private:
    using Backward = std::function<void(Tape&, const Tensor&)>;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };

    std::vector<Node> nodes_;

    static void guard(const Tensor& t, const char* op) {
        if (!t.all_finite()) throw NumericalError(std::string(op) + ": non-finite value");
    }

    static void accumulate(Tensor& dst, const Tensor& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    Tensor& grad_mut(Var v) { return nodes_[v.id].grad; }

    Var push(Tensor value, bool requires_grad, Backward backward) {
        Node n;
        n.grad = Tensor(value.rows(), value.cols());
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var record(Tensor value, const char* op, std::initializer_list<Var> inputs, Backward backward) {
        guard(value, op);
        bool needs = false;
        for (Var in : inputs) needs = needs || requires_grad(in);
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
    }

    void same_shape(Var a, Var b, const char* op) const {
        if (value(a).shape() != value(b).shape()) {
            throw DimensionMismatch(std::string(op) + ": shape mismatch");
        }
    }

    Var combine(Var a, Var b, double sign, const char* op) {
        same_shape(a, b, op);
        Tensor out = value(a);
        const Tensor& y = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * y[i];
        return record(std::move(out), op, {a, b}, [a, b, sign](Tape& t, const Tensor& g) {
            if (t.requires_grad(a)) accumulate(t.grad_mut(a), g);
            if (t.requires_grad(b)) {
                Tensor& gb = t.grad_mut(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
            }
        });
    }
};

struct Layer {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // 1 x fan_out

    bool operator==(const Layer&) const = default;
};

/// ReLU multilayer perceptron; the last layer emits C logits.
struct MLPModel {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    bool operator==(const MLPModel&) const = default;

    /// Glorot-uniform weights, zero biases. widths = {d, hidden..., C}.
    static MLPModel init(std::span<const std::size_t> widths, std::uint64_t seed) {
        if (widths.size() < 2) throw InvalidInput("MLP needs at least input and output widths");
        for (std::size_t w : widths)
            if (w == 0) throw InvalidInput("MLP widths must be positive");
        std::mt19937_64 rng(seed);
        MLPModel m;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const std::size_t in = widths[l], out = widths[l + 1];
            const double a = std::sqrt(6.0 / static_cast<double>(in + out));
            std::uniform_real_distribution<double> dist(-a, a);
            Layer layer{Tensor(in, out), Tensor(1, out)};
            for (double& v : layer.weight.values()) v = dist(rng);
            m.layers.push_back(std::move(layer));
        }
        return m;
    }

    void check() const {
        if (layers.empty()) throw InvalidInput("MLP has no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            if (L.bias.rows() != 1 || L.bias.cols() != L.weight.cols())
                throw DimensionMismatch("bias width", L.weight.cols(), L.bias.cols());
            if (l > 0 && layers[l - 1].weight.cols() != L.weight.rows())
                throw DimensionMismatch("layer chaining", layers[l - 1].weight.cols(), L.weight.rows());
        }
    }
};

/// Parameter-shaped gradients (or velocities).
struct Gradients {
    std::vector<Layer> layers;

    static Gradients zeros_like(const MLPModel& m) {
        Gradients g;
        for (const auto& l : m.layers) {
            g.layers.push_back({Tensor(l.weight.rows(), l.weight.cols()), Tensor(1, l.bias.cols())});
        }
        return g;
    }

    bool operator==(const Gradients&) const = default;
};

/// A recorded forward pass: the tape plus handles to the input, every
/// parameter leaf and the logits.
struct ForwardPass {
    Tape tape;
    Var input;
    std::vector<std::pair<Var, Var>> params;  // (weight, bias) per layer
    Var logits;

    /// Model gradients after tape.backward(loss).
    Gradients gradients() const {
        Gradients g;
        for (const auto& [w, b] : params) g.layers.push_back({tape.grad(w), tape.grad(b)});
        return g;
    }
};

/// Logits of a batch (N x d) as a recorded computation.
inline ForwardPass forward(const MLPModel& model, const Tensor& inputs, bool input_requires_grad = false) {
    model.check();
    if (inputs.cols() != model.input_dim()) {
        throw DimensionMismatch("input width", model.input_dim(), inputs.cols());
    }
    ForwardPass pass;
    pass.input = pass.tape.leaf(inputs, input_requires_grad);
    Var h = pass.input;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Var w = pass.tape.leaf(model.layers[l].weight);
        const Var b = pass.tape.leaf(model.layers[l].bias);
        pass.params.emplace_back(w, b);
        h = pass.tape.add_row(pass.tape.matmul(h, w), b);
        if (l + 1 < model.layers.size()) h = pass.tape.relu(h);
    }
    pass.logits = h;
    return pass;
}

/// Reverse pass from `loss`, returning model gradients.
inline Gradients backward(ForwardPass& pass, Var loss) {
    pass.tape.backward(loss);
    return pass.gradients();
}

/// Softmax outputs of the model for every row, without recording gradients.
inline ProbMatrix predict_proba(const MLPModel& model, const Tensor& inputs) {
    ForwardPass pass = forward(model, inputs);
    const Var p = pass.tape.softmax_rows(pass.logits);
    const Tensor& v = pass.tape.value(p);
    std::vector<double> flat(v.values().begin(), v.values().end());
    // Softmax rows can drift from 1 by a few ulps; renormalize before validating.
    for (std::size_t j = 0; j < v.rows(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.cols(); ++i) s += flat[j * v.cols() + i];
        for (std::size_t i = 0; i < v.cols(); ++i) flat[j * v.cols() + i] /= s;
    }
    return ProbMatrix(v.rows(), v.cols(), std::move(flat));
}

/// Step learning-rate schedule: lr *= factor at each milestone epoch, or at
/// every epoch >= 1 when every_epoch is set.
struct LrSchedule {
    std::vector<int> milestones;
    double factor = 0.1;
    bool every_epoch = false;

    bool operator==(const LrSchedule&) const = default;
};

struct OptimizerState {
    Gradients velocity;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LrSchedule schedule;
    int last_scheduled_epoch = 0;

    static OptimizerState for_model(const MLPModel& m, double lr, double momentum, double weight_decay,
                                    LrSchedule schedule = {}) {
        if (!(lr > 0.0)) throw InvalidInput("learning rate must be positive");
        OptimizerState s;
        s.velocity = Gradients::zeros_like(m);
        s.lr = lr;
        s.momentum = momentum;
        s.weight_decay = weight_decay;
        s.schedule = std::move(schedule);
        return s;
    }

    bool operator==(const OptimizerState&) const = default;
};

/// v <- momentum v + (g + wd theta); theta <- theta - lr v.
inline void sgd_step(MLPModel& model, const Gradients& grads, OptimizerState& state) {
    if (grads.layers.size() != model.layers.size() || state.velocity.layers.size() != model.layers.size()) {
        throw DimensionMismatch("gradient layer count", model.layers.size(), grads.layers.size());
    }
    auto update = [&](Tensor& theta, const Tensor& g, Tensor& v) {
        if (g.shape() != theta.shape() || v.shape() != theta.shape()) {
            throw DimensionMismatch("gradient shape mismatch");
        }
        for (std::size_t i = 0; i < theta.size(); ++i) {
            v[i] = state.momentum * v[i] + (g[i] + state.weight_decay * theta[i]);
            theta[i] -= state.lr * v[i];
        }
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        update(model.layers[l].weight, grads.layers[l].weight, state.velocity.layers[l].weight);
        update(model.layers[l].bias, grads.layers[l].bias, state.velocity.layers[l].bias);
    }
}

/// Applies the schedule for `epoch`; calling twice with the same epoch is a no-op.
inline void schedule_step(OptimizerState& state, int epoch) {
    if (epoch < 0) throw InvalidInput("epoch must be non-negative");
    if (epoch == state.last_scheduled_epoch) return;
    state.last_scheduled_epoch = epoch;
    const auto& s = state.schedule;
    const bool hit = s.every_epoch ? epoch >= 1
                                   : std::find(s.milestones.begin(), s.milestones.end(), epoch) != s.milestones.end();
    if (hit) state.lr *= s.factor;
}

}  // namespace cmi::nn
