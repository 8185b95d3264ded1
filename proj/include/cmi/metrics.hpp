#pragma once

// Empirical concentration/separation metrics of a classifier's output
// distributions {P_x} paired with ground-truth labels.
//
// Pairwise quantities (gamma, gamma_prime, gamma_double_prime) are sums over
// all ordered pairs (j, k) with y_j != y_k, normalized by n^2. They are
// evaluated through per-class sums of log-probability rows, which is exact
// and O(n C^2) instead of O(n^2 C).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cmi/error.hpp"
#include "cmi/numerics.hpp"

namespace cmi {

/// What to do with a class that has no samples.
enum class EmptyClassPolicy {
    Throw,  ///< raise EmptyClass
    Skip,   ///< leave the centroid undefined; only valid when no sample refers to it
};

/// Per-class mean output distributions (empirical P_{Yhat|Y=c}).
struct CentroidSet {
    std::vector<std::vector<double>> centroids;  // C rows of length C
    std::vector<std::size_t> counts;

    std::size_t classes() const noexcept { return counts.size(); }
    bool defined(std::size_t c) const { return counts.at(c) > 0; }
    std::span<const double> operator[](std::size_t c) const { return centroids.at(c); }
};

struct MetricsReport {
    double cmi = 0.0;
    double gamma = 0.0;
    std::optional<double> ncmi;  // empty when gamma == 0
    double gamma_prime = 0.0;
    double gamma_double_prime = 0.0;
    double eps_expected = 0.0;
    double eps_top1 = 0.0;
    double ce_bound = 0.0;
    std::size_t n = 0;
    std::size_t c = 0;
};

struct ErrorRates {
    double eps_expected = 0.0;  ///< 1 - mean_j P_{x_j}(y_j)
    double eps_top1 = 0.0;      ///< fraction with argmax != label
    double ce_bound = 0.0;      ///< mean one-hot cross entropy
};

inline CentroidSet centroids(const ProbMatrix& p, const LabelVector& y,
                             EmptyClassPolicy policy = EmptyClassPolicy::Throw) {
    check_paired(p, y);
    const std::size_t classes = p.classes();
    CentroidSet set;
    set.centroids.assign(classes, std::vector<double>(classes, 0.0));
    set.counts.assign(classes, 0);
    for (std::size_t j = 0; j < p.rows(); ++j) {
        auto& acc = set.centroids[y[j]];
        const auto row = p.row(j);
        for (std::size_t i = 0; i < classes; ++i) acc[i] += row[i];
        ++set.counts[y[j]];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (set.counts[c] == 0) {
            if (policy == EmptyClassPolicy::Throw) throw EmptyClass(c);
            continue;
        }
        for (double& v : set.centroids[c]) v /= static_cast<double>(set.counts[c]);
    }
    return set;
}

/// Empirical I(X; Yhat | Y): mean KL divergence from each row to its class centroid.
inline double cmi(const ProbMatrix& p, const LabelVector& y,
                  EmptyClassPolicy policy = EmptyClassPolicy::Throw) {
    const CentroidSet q = centroids(p, y, policy);
    double total = 0.0;
    for (std::size_t j = 0; j < p.rows(); ++j) total += kl_divergence(p.row(j), q[y[j]]);
    return total / static_cast<double>(p.rows());
}

/// E[D(P_x || Q_y)] for arbitrary per-class distributions q. Never below cmi(p, y).
inline double variational_cmi(const ProbMatrix& p, const LabelVector& y,
                              std::span<const ProbVector> q) {
    check_paired(p, y);
    if (q.size() != p.classes()) throw DimensionMismatch("per-class distribution count", p.classes(), q.size());
    for (const auto& qc : q) {
        if (qc.size() != p.classes()) throw DimensionMismatch("distribution length", p.classes(), qc.size());
    }
    double total = 0.0;
    for (std::size_t j = 0; j < p.rows(); ++j) total += kl_divergence(p.row(j), q[y[j]]);
    return total / static_cast<double>(p.rows());
}

namespace detail {

// Sum of clamped log rows for every class except c, for each c.
// out_of_class[c][i] = sum_{k : y_k != c} ln p_k(i)
inline std::vector<std::vector<double>> out_of_class_log_sums(const ProbMatrix& p, const LabelVector& y) {
    const std::size_t classes = p.classes();
    std::vector<std::vector<double>> per_class(classes, std::vector<double>(classes, 0.0));
    for (std::size_t k = 0; k < p.rows(); ++k) {
        auto& acc = per_class[y[k]];
        const auto row = p.row(k);
        for (std::size_t i = 0; i < classes; ++i) acc[i] += clamp_log(row[i]);
    }
    std::vector<std::vector<double>> out(classes, std::vector<double>(classes, 0.0));
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t other = 0; other < classes; ++other) {
            if (other == c) continue;
            for (std::size_t i = 0; i < classes; ++i) out[c][i] += per_class[other][i];
        }
    }
    return out;
}

inline std::vector<std::size_t> class_counts(const LabelVector& y) {
    std::vector<std::size_t> counts(y.classes(), 0);
    for (std::size_t j = 0; j < y.size(); ++j) ++counts[y[j]];
    return counts;
}

// -sum_i p(i) s(i) restricted to p(i) > 0.
inline double neg_dot(std::span<const double> p, std::span<const double> s) {
    double v = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) v -= p[i] * s[i];
    }
    return v;
}

}  // namespace detail

/// Gamma = (1/n^2) sum_{j,k} 1{y_j != y_k} H(P_{x_j}, P_{x_k}).
inline double gamma(const ProbMatrix& p, const LabelVector& y) {
    check_paired(p, y);
    const auto others = detail::out_of_class_log_sums(p, y);
    double total = 0.0;
    for (std::size_t j = 0; j < p.rows(); ++j) total += detail::neg_dot(p.row(j), others[y[j]]);
    const double n = static_cast<double>(p.rows());
    return total / (n * n);
}

/// Gamma' : as gamma with D(P_{x_j} || P_{x_k}) as the pair term.
inline double gamma_prime(const ProbMatrix& p, const LabelVector& y) {
    check_paired(p, y);
    const auto others = detail::out_of_class_log_sums(p, y);
    const auto counts = detail::class_counts(y);
    const std::size_t n = p.rows();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto row = p.row(j);
        const double partners = static_cast<double>(n - counts[y[j]]);
        total += detail::neg_dot(row, others[y[j]]) - partners * shannon_entropy(row);
    }
    const double nn = static_cast<double>(n);
    return total / (nn * nn);
}

/// Gamma'' : (1/n^2) sum_{j,k} 1{y_j != y_k} D(Q_{y_j} || P_{x_k}) with empirical centroids Q.
inline double gamma_double_prime(const ProbMatrix& p, const LabelVector& y,
                                 EmptyClassPolicy policy = EmptyClassPolicy::Throw) {
    const CentroidSet q = centroids(p, y, policy);
    const auto others = detail::out_of_class_log_sums(p, y);
    const std::size_t n = p.rows();
    double total = 0.0;
    for (std::size_t c = 0; c < q.classes(); ++c) {
        if (!q.defined(c)) continue;
        const double members = static_cast<double>(q.counts[c]);
        const double partners = static_cast<double>(n - q.counts[c]);
        total += members * (detail::neg_dot(q[c], others[c]) - partners * shannon_entropy(q[c]));
    }
    const double nn = static_cast<double>(n);
    return total / (nn * nn);
}

/// cmi / gamma; throws DegenerateSeparation when gamma == 0.
inline double ncmi(const ProbMatrix& p, const LabelVector& y,
                   EmptyClassPolicy policy = EmptyClassPolicy::Throw) {
    const double g = gamma(p, y);
    if (!(g > 0.0)) throw DegenerateSeparation();
    return cmi(p, y, policy) / g;
}

/// Index of the largest entry; ties go to the smallest index.
inline std::size_t argmax(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

inline ErrorRates error_rates(const ProbMatrix& p, const LabelVector& y) {
    check_paired(p, y);
    double hit_mass = 0.0;
    double ce = 0.0;
    std::size_t misses = 0;
    for (std::size_t j = 0; j < p.rows(); ++j) {
        const auto row = p.row(j);
        hit_mass += row[y[j]];
        ce += cross_entropy_onehot(y[j], row);
        if (argmax(row) != y[j]) ++misses;
    }
    const double n = static_cast<double>(p.rows());
    return {1.0 - hit_mass / n, static_cast<double>(misses) / n, ce / n};
}

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw DimensionMismatch("pearson sequence length", xs.size(), ys.size());
    if (xs.size() < 2) throw DegenerateInput("pearson: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Every metric for one (ProbMatrix, LabelVector) pair.
inline MetricsReport metrics_report(const ProbMatrix& p, const LabelVector& y,
                                    EmptyClassPolicy policy = EmptyClassPolicy::Throw) {
    MetricsReport r;
    r.n = p.rows();
    r.c = p.classes();
    r.cmi = cmi(p, y, policy);
    r.gamma = gamma(p, y);
    if (r.gamma > 0.0) r.ncmi = r.cmi / r.gamma;
    r.gamma_prime = gamma_prime(p, y);
    r.gamma_double_prime = gamma_double_prime(p, y, policy);
    const ErrorRates e = error_rates(p, y);
    r.eps_expected = e.eps_expected;
    r.eps_top1 = e.eps_top1;
    r.ce_bound = e.ce_bound;
    return r;
}

}  // namespace cmi
