#pragma once

// Planar coordinates of three selected classes on the 2-simplex, with
// vertices (0,0), (1,0) and (1/2, sqrt(3)/2).

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>

#include "cmi/error.hpp"
#include "cmi/numerics.hpp"

namespace cmi::simplex {

struct Point {
    double u = 0.0;
    double v = 0.0;
};

using Triple = std::array<std::size_t, 3>;

inline void check_triple(const Triple& cls, std::size_t classes) {
    for (std::size_t c : cls)
        if (c >= classes) throw InvalidInput("simplex class index out of range");
    if (cls[0] == cls[1] || cls[0] == cls[2] || cls[1] == cls[2])
        throw InvalidInput("simplex classes must be distinct");
}

/// Barycentric map of already-normalized weights (w0, w1, w2).
inline Point barycentric(double w0, double w1, double w2) {
    (void)w0;
    return {w1 + 0.5 * w2, w2 * std::numbers::sqrt3 / 2.0};
}

/// Renormalizes the three selected probability columns; nullopt when they carry no mass.
inline std::optional<Point> project_probs(std::span<const double> p, const Triple& cls) {
    check_triple(cls, p.size());
    const double total = p[cls[0]] + p[cls[1]] + p[cls[2]];
    if (!(total > 0.0)) return std::nullopt;
    return barycentric(p[cls[0]] / total, p[cls[1]] / total, p[cls[2]] / total);
}

/// Softmax over the three selected logits only.
inline Point project_logits(std::span<const double> logits, const Triple& cls) {
    check_triple(cls, logits.size());
    const std::array<double, 3> z{logits[cls[0]], logits[cls[1]], logits[cls[2]]};
    const ProbVector w = softmax(z);
    return barycentric(w[0], w[1], w[2]);
}

}  // namespace cmi::simplex
