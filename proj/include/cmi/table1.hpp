#pragma once

// Published CMI / Gamma / NCMI / top-1 error values of 18 ImageNet
// classifiers (validation set), and their consistency/correlation summary.

#include <array>
#include <cmath>
#include <string_view>
#include <vector>

#include "cmi/metrics.hpp"

namespace cmi::table1 {

struct Row {
    std::string_view model;
    double cmi;
    double gamma;
    double ncmi;
    double error_top1;
};

inline constexpr std::array<Row, 18> kRows{{
    {"ResNet18", 0.999, 9.891, 0.101, 0.302},
    {"ResNet34", 0.902, 9.919, 0.090, 0.266},
    {"ResNet50", 0.815, 9.929, 0.082, 0.238},
    {"ResNet101", 0.779, 9.948, 0.078, 0.226},
    {"ResNet152", 0.749, 9.953, 0.075, 0.216},
    {"VGG11", 0.959, 9.899, 0.096, 0.296},
    {"VGG13", 0.930, 9.909, 0.094, 0.284},
    {"VGG16", 0.878, 9.925, 0.088, 0.266},
    {"VGG19", 0.860, 9.930, 0.086, 0.257},
    {"AlexNet", 1.331, 9.830, 0.135, 0.434},
    {"EfficientNet-B0", 0.692, 9.433, 0.073, 0.220},
    {"EfficientNet-B1", 0.661, 9.114, 0.072, 0.213},
    {"EfficientNet-B2", 0.639, 9.224, 0.069, 0.193},
    {"EfficientNet-B3", 0.627, 9.365, 0.067, 0.180},
    {"Wide-ResNet50", 0.749, 9.935, 0.075, 0.215},
    {"Wide-ResNet101", 0.734, 9.937, 0.073, 0.211},
    {"MobileNet-V3-Small", 1.088, 9.898, 0.110, 0.323},
    {"MobileNet-V3-Large", 0.922, 9.956, 0.092, 0.259},
}};

inline constexpr double kPublishedPearson = 0.9929;
/// Half a unit in the third decimal of the published NCMI column.
inline constexpr double kRoundingTolerance = 0.0005;

struct Report {
    std::vector<double> recomputed_ncmi;
    std::vector<double> discrepancy;  // |cmi/gamma - published ncmi|
    double max_discrepancy = 0.0;
    std::size_t rows_within_tolerance = 0;
    double pearson_published = 0.0;   // over the published NCMI column
    double pearson_recomputed = 0.0;  // over cmi/gamma
};

inline Report report() {
    Report r;
    std::vector<double> published, errors;
    for (const auto& row : kRows) {
        const double ncmi = row.cmi / row.gamma;
        const double d = std::abs(ncmi - row.ncmi);
        r.recomputed_ncmi.push_back(ncmi);
        r.discrepancy.push_back(d);
        r.max_discrepancy = std::max(r.max_discrepancy, d);
        if (d <= kRoundingTolerance) ++r.rows_within_tolerance;
        published.push_back(row.ncmi);
        errors.push_back(row.error_top1);
    }
    r.pearson_published = pearson(published, errors);
    r.pearson_recomputed = pearson(r.recomputed_ncmi, errors);
    return r;
}

}  // namespace cmi::table1
