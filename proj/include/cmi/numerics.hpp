#pragma once

// Probability-vector primitives over a finite label alphabet [C].
// All quantities are in nats. Logarithms of probabilities go through
// clamp_log, which floors its argument at kProbFloor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cmi/error.hpp"

namespace cmi {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kSumTolerance = 1e-9;

namespace detail {

inline void check_distribution(std::span<const double> values, const char* what) {
    if (values.size() < 2) {
        throw InvalidInput(std::string(what) + ": need at least 2 classes");
    }
    double sum = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw InvalidInput(std::string(what) + ": entry outside [0, 1]");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        throw InvalidInput(std::string(what) + ": entries sum to " + std::to_string(sum));
    }
}

inline void check_same_length(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw DimensionMismatch("distribution length", p.size(), q.size());
    }
}

}  // namespace detail

/// A validated probability vector over C >= 2 classes.
class ProbVector {
public:
    ProbVector() = default;
    explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
        detail::check_distribution(values_, "ProbVector");
    }
    ProbVector(std::initializer_list<double> values) : ProbVector(std::vector<double>(values)) {}

    static ProbVector uniform(std::size_t classes) {
        return ProbVector(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
    }

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    operator std::span<const double>() const noexcept { return values_; }

    bool operator==(const ProbVector&) const = default;

private:
    std::vector<double> values_;
};

/// N row-stochastic rows over C classes, stored row-major.
class ProbMatrix {
public:
    ProbMatrix() = default;

    ProbMatrix(std::size_t rows, std::size_t classes, std::vector<double> values)
        : rows_(rows), classes_(classes), values_(std::move(values)) {
        if (rows_ == 0) throw InvalidInput("ProbMatrix: need at least one row");
        if (values_.size() != rows_ * classes_) {
            throw DimensionMismatch("ProbMatrix value count", rows_ * classes_, values_.size());
        }
        for (std::size_t j = 0; j < rows_; ++j) detail::check_distribution(row(j), "ProbMatrix row");
    }

    explicit ProbMatrix(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw InvalidInput("ProbMatrix: need at least one row");
        std::vector<double> flat;
        for (const auto& r : rows) {
            if (r.size() != rows.front().size()) {
                throw DimensionMismatch("ProbMatrix row length", rows.front().size(), r.size());
            }
            flat.insert(flat.end(), r.begin(), r.end());
        }
        *this = ProbMatrix(rows.size(), rows.front().size(), std::move(flat));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t classes() const noexcept { return classes_; }
    std::span<const double> row(std::size_t j) const {
        return std::span<const double>(values_).subspan(j * classes_, classes_);
    }
    double operator()(std::size_t j, std::size_t i) const { return values_[j * classes_ + i]; }
    std::span<const double> values() const noexcept { return values_; }

private:
    std::size_t rows_ = 0;
    std::size_t classes_ = 0;
    std::vector<double> values_;
};

/// Ground-truth class indices in [0, C).
class LabelVector {
public:
    LabelVector() = default;
    LabelVector(std::vector<std::size_t> labels, std::size_t classes)
        : labels_(std::move(labels)), classes_(classes) {
        for (std::size_t y : labels_) {
            if (y >= classes_) {
                throw InvalidInput("label " + std::to_string(y) + " out of range for " +
                                   std::to_string(classes_) + " classes");
            }
        }
    }

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t operator[](std::size_t j) const { return labels_[j]; }
    std::span<const std::size_t> values() const noexcept { return labels_; }

    bool operator==(const LabelVector&) const = default;

private:
    std::vector<std::size_t> labels_;
    std::size_t classes_ = 0;
};

inline void check_paired(const ProbMatrix& p, const LabelVector& y) {
    if (p.rows() != y.size()) throw DimensionMismatch("label count", p.rows(), y.size());
    if (p.classes() != y.classes()) throw DimensionMismatch("class count", p.classes(), y.classes());
}

/// Max-shifted softmax.
inline ProbVector softmax(std::span<const double> logits) {
    if (logits.size() < 2) throw InvalidInput("softmax: need at least 2 logits");
    double peak = -INFINITY;
    for (double z : logits) {
        if (!std::isfinite(z)) throw InvalidInput("softmax: non-finite logit");
        peak = std::max(peak, z);
    }
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return ProbVector(std::move(out));
}

inline double clamp_log(double p) noexcept { return std::log(std::max(p, kProbFloor)); }

/// H(p, q) = -sum_i p(i) ln q(i).
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
    detail::check_same_length(p, q);
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) h -= p[i] * clamp_log(q[i]);
    return h;
}

/// H(e_y, q) = -ln q(y).
inline double cross_entropy_onehot(std::size_t y, std::span<const double> q) {
    if (y >= q.size()) throw InvalidInput("cross_entropy_onehot: class index out of range");
    return -clamp_log(q[y]);
}

/// D(p || q) with 0 ln(0/q) = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    detail::check_same_length(p, q);
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) d += p[i] * (clamp_log(p[i]) - clamp_log(q[i]));
    }
    return d;
}

inline double shannon_entropy(std::span<const double> p) noexcept {
    double h = 0.0;
    for (double v : p) h -= v * clamp_log(v);
    return h;
}

}  // namespace cmi
