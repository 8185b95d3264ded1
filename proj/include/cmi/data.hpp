#pragma once

// Datasets: synthetic Gaussian blobs, IDX (MNIST layout) and CSV loaders,
// epoch batching and class-stratified sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmi/error.hpp"
#include "cmi/io.hpp"
#include "cmi/nn.hpp"
#include "cmi/numerics.hpp"

namespace cmi::data {

/// Per-feature affine map x' = (x - shift) / scale.
struct FeatureStats {
    std::vector<double> shift;
    std::vector<double> scale;
    bool clip_unit = false;  // clamp results into [0, 1]
};

struct Dataset {
    nn::Tensor features;  // N x d
    LabelVector labels;
    std::optional<FeatureStats> normalization;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }
    std::size_t classes() const noexcept { return labels.classes(); }

    void check() const {
        if (features.rows() != labels.size()) throw DimensionMismatch("dataset label count", features.rows(), labels.size());
        if (!features.all_finite()) throw InvalidInput("dataset features must be finite");
    }
};

inline nn::Tensor gather_rows(const nn::Tensor& x, std::span<const std::size_t> idx) {
    nn::Tensor out(idx.size(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = x.row(idx[r]);
        std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * x.cols()));
    }
    return out;
}

inline LabelVector gather_labels(const LabelVector& y, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(y[i]);
    return LabelVector(std::move(out), y.classes());
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> idx) {
    return Dataset{gather_rows(d.features, idx), gather_labels(d.labels, idx), d.normalization};
}

/// Balanced isotropic Gaussian blobs, class-major order. Class c is centred
/// at radius * u_c where u_c is the c-th basis vector when classes <= dim and
/// a seeded random unit direction otherwise.
inline Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                         std::uint64_t seed, double radius = 1.0) {
    if (classes < 2) throw InvalidInput("gen_blobs: need at least 2 classes");
    if (per_class < 1 || dim < 1) throw InvalidInput("gen_blobs: per_class and dim must be positive");
    if (!(spread >= 0.0)) throw InvalidInput("gen_blobs: spread must be non-negative");
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim, 0.0));
    if (classes <= dim) {
        for (std::size_t c = 0; c < classes; ++c) centers[c][c] = radius;
    } else {
        std::mt19937_64 dir_rng(0x5eedc0ffeeULL);
        std::normal_distribution<double> g(0.0, 1.0);
        for (auto& ctr : centers) {
            double norm = 0.0;
            do {
                norm = 0.0;
                for (double& v : ctr) {
                    v = g(dir_rng);
                    norm += v * v;
                }
            } while (norm == 0.0);
            for (double& v : ctr) v *= radius / std::sqrt(norm);
        }
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    nn::Tensor x(classes * per_class, dim);
    std::vector<std::size_t> y;
    y.reserve(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t r = y.size();
            for (std::size_t k = 0; k < dim; ++k) x(r, k) = centers[c][k] + spread * noise(rng);
            y.push_back(c);
        }
    }
    return Dataset{std::move(x), LabelVector(std::move(y), classes), std::nullopt};
}

/// Min-max map of the reference features onto [0, 1]; constant features map to 0.
inline FeatureStats fit_minmax(const nn::Tensor& x) {
    FeatureStats s;
    s.clip_unit = true;
    for (std::size_t k = 0; k < x.cols(); ++k) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            lo = std::min(lo, x(r, k));
            hi = std::max(hi, x(r, k));
        }
        s.shift.push_back(lo);
        s.scale.push_back(hi > lo ? hi - lo : 1.0);
    }
    return s;
}

/// Per-feature standardization to zero mean, unit variance.
inline FeatureStats fit_standardize(const nn::Tensor& x) {
    FeatureStats s;
    const double n = static_cast<double>(x.rows());
    for (std::size_t k = 0; k < x.cols(); ++k) {
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, k);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, k) - mean) * (x(r, k) - mean);
        const double sd = std::sqrt(var / n);
        s.shift.push_back(mean);
        s.scale.push_back(sd > 0.0 ? sd : 1.0);
    }
    return s;
}

inline void apply_stats(Dataset& d, const FeatureStats& s) {
    if (s.shift.size() != d.dim()) throw DimensionMismatch("feature stats width", d.dim(), s.shift.size());
    for (std::size_t r = 0; r < d.size(); ++r) {
        for (std::size_t k = 0; k < d.dim(); ++k) {
            double v = (d.features(r, k) - s.shift[k]) / s.scale[k];
            if (s.clip_unit) v = std::clamp(v, 0.0, 1.0);
            d.features(r, k) = v;
        }
    }
    d.normalization = s;
}

/// Shuffled partition of [0, n) into consecutive batches; the last may be short.
class BatchPlan {
public:
    BatchPlan(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) : order_(n), batch_size_(batch_size) {
        if (batch_size == 0) throw InvalidInput("batch size must be positive");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng);
    }

    std::size_t batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }
    std::span<const std::size_t> batch(std::size_t b) const {
        const std::size_t begin = b * batch_size_;
        const std::size_t len = std::min(batch_size_, order_.size() - begin);
        return std::span<const std::size_t>(order_).subspan(begin, len);
    }
    std::span<const std::size_t> permutation() const noexcept { return order_; }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
};

/// Sample indices grouped by class.
inline std::vector<std::vector<std::size_t>> class_members(const LabelVector& y) {
    std::vector<std::vector<std::size_t>> members(y.classes());
    for (std::size_t j = 0; j < y.size(); ++j) members[y[j]].push_back(j);
    return members;
}

/// For each class, class_batch_size indices of that class: drawn without
/// replacement when the class is large enough, with replacement otherwise.
inline std::vector<std::vector<std::size_t>> stratified_batches(
    const std::vector<std::vector<std::size_t>>& members, std::size_t class_batch_size, std::mt19937_64& rng) {
    if (class_batch_size == 0) throw InvalidInput("class batch size must be positive");
    std::vector<std::vector<std::size_t>> out(members.size());
    for (std::size_t c = 0; c < members.size(); ++c) {
        const auto& pool = members[c];
        if (pool.empty()) throw EmptyClass(c);
        auto& batch = out[c];
        if (pool.size() < class_batch_size) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            for (std::size_t s = 0; s < class_batch_size; ++s) batch.push_back(pool[pick(rng)]);
        } else {
            std::vector<std::size_t> scratch = pool;
            for (std::size_t s = 0; s < class_batch_size; ++s) {
                std::uniform_int_distribution<std::size_t> pick(s, scratch.size() - 1);
                std::swap(scratch[s], scratch[pick(rng)]);
                batch.push_back(scratch[s]);
            }
        }
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> stratified_batches(const Dataset& d, std::size_t class_batch_size,
                                                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return stratified_batches(class_members(d.labels), class_batch_size, rng);
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& path) {
    if (offset + 4 > bytes.size()) throw FormatError(path, "byte offset", offset, "truncated header");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

inline void put_be32(std::string& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xffU));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an unsigned-byte IDX image/label pair. Pixels are scaled to [0, 1]
/// and each image is flattened row-major. classes == 0 infers max label + 1
/// (at least 2).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 0) {
    const std::string img = io::read_file(images_path);
    const std::string lab = io::read_file(labels_path);
    if (detail::read_be32(img, 0, images_path) != kIdxImagesMagic)
        throw FormatError(images_path, "byte offset", 0, "bad magic, expected 0x00000803");
    if (detail::read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
        throw FormatError(labels_path, "byte offset", 0, "bad magic, expected 0x00000801");
    const std::size_t n = detail::read_be32(img, 4, images_path);
    const std::size_t rows = detail::read_be32(img, 8, images_path);
    const std::size_t cols = detail::read_be32(img, 12, images_path);
    const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
    if (n != n_labels)
        throw FormatError(labels_path, "byte offset", 4,
                          "label count " + std::to_string(n_labels) + " != image count " + std::to_string(n));
    const std::size_t dim = rows * cols;
    if (img.size() < 16 + n * dim) throw FormatError(images_path, "byte offset", img.size(), "truncated pixel data");
    if (lab.size() < 8 + n) throw FormatError(labels_path, "byte offset", lab.size(), "truncated label data");
    nn::Tensor x(n, dim);
    std::vector<std::size_t> y(n);
    std::size_t max_label = 0;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < dim; ++k) {
            x(j, k) = static_cast<unsigned char>(img[16 + j * dim + k]) / 255.0;
        }
        y[j] = static_cast<unsigned char>(lab[8 + j]);
        max_label = std::max(max_label, y[j]);
    }
    if (classes == 0) classes = std::max<std::size_t>(2, max_label + 1);
    return Dataset{std::move(x), LabelVector(std::move(y), classes), std::nullopt};
}

/// Writes features (assumed in [0, 1]) as an IDX image file of rows x cols
/// images and the labels as an IDX label file.
inline void write_idx(const Dataset& d, std::size_t rows, std::size_t cols, const std::string& images_path,
                      const std::string& labels_path) {
    if (rows * cols != d.dim()) throw DimensionMismatch("image size", d.dim(), rows * cols);
    std::string img;
    detail::put_be32(img, kIdxImagesMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(rows));
    detail::put_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : d.features.values()) {
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    std::string lab;
    detail::put_be32(lab, kIdxLabelsMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
    for (std::size_t j = 0; j < d.size(); ++j) {
        if (d.labels[j] > 255) throw InvalidInput("IDX labels must fit in a byte");
        lab.push_back(static_cast<char>(static_cast<unsigned char>(d.labels[j])));
    }
    io::write_file(images_path, img);
    io::write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr double kRowSumSilent = 1e-6;
inline constexpr double kRowSumReject = 1e-3;

struct ProbCsv {
    ProbMatrix probs;
    LabelVector labels;
    std::size_t renormalized_rows = 0;  // rows off by more than kRowSumSilent
};

namespace detail {

inline std::size_t parse_header(std::string_view header, char prefix, const std::string& path) {
    const auto cols = io::split(header, ',');
    if (cols.size() < 3 || cols[0] != "label") throw FormatError(path, "line", 1, "header must start with 'label' and name at least 2 columns");
    for (std::size_t i = 1; i < cols.size(); ++i) {
        if (cols[i] != std::string(1, prefix) + std::to_string(i - 1))
            throw FormatError(path, "line", 1, "unexpected column '" + std::string(cols[i]) + "'");
    }
    return cols.size() - 1;
}

}  // namespace detail

/// Reads `label,p0,...,p{C-1}`. Rows are renormalized; a row whose sum is
/// off by more than 1e-3 is rejected.
inline ProbCsv load_probmatrix_csv(const std::string& path) {
    const std::string text = io::read_file(path);
    const auto ls = io::lines(text);
    if (ls.empty()) throw FormatError(path, "line", 1, "empty file");
    const std::size_t classes = detail::parse_header(ls[0], 'p', path);
    std::vector<double> flat;
    std::vector<std::size_t> labels;
    std::size_t loose = 0;
    for (std::size_t li = 1; li < ls.size(); ++li) {
        const std::size_t line_no = li + 1;
        if (ls[li].empty()) continue;
        const auto cells = io::split(ls[li], ',');
        if (cells.size() != classes + 1) throw FormatError(path, "line", line_no, "wrong column count");
        std::size_t y = 0;
        if (!io::parse_size(cells[0], y) || y >= classes) throw FormatError(path, "line", line_no, "bad label");
        std::vector<double> row(classes);
        double sum = 0.0;
        for (std::size_t i = 0; i < classes; ++i) {
            if (!io::parse_double(cells[i + 1], row[i]) || !std::isfinite(row[i]) || row[i] < 0.0)
                throw FormatError(path, "line", line_no, "bad probability in column p" + std::to_string(i));
            sum += row[i];
        }
        if (std::abs(sum - 1.0) > kRowSumReject)
            throw FormatError(path, "line", line_no, "row sums to " + io::format_double(sum));
        if (std::abs(sum - 1.0) > kRowSumSilent) ++loose;
        for (double v : row) flat.push_back(std::min(v / sum, 1.0));
        labels.push_back(y);
    }
    if (labels.empty()) throw FormatError(path, "line", 2, "no data rows");
    const std::size_t n = labels.size();
    return ProbCsv{ProbMatrix(n, classes, std::move(flat)), LabelVector(std::move(labels), classes), loose};
}

inline std::string probmatrix_csv(const ProbMatrix& p, const LabelVector& y) {
    check_paired(p, y);
    std::string out = "label";
    for (std::size_t i = 0; i < p.classes(); ++i) out += ",p" + std::to_string(i);
    out += '\n';
    for (std::size_t j = 0; j < p.rows(); ++j) {
        out += std::to_string(y[j]);
        for (double v : p.row(j)) out += ',' + io::format_double(v);
        out += '\n';
    }
    return out;
}

/// Reads `label,f0,...,f{d-1}`. classes == 0 infers max label + 1 (at least 2).
inline Dataset load_dataset_csv(const std::string& path, std::size_t classes = 0) {
    const std::string text = io::read_file(path);
    const auto ls = io::lines(text);
    if (ls.empty()) throw FormatError(path, "line", 1, "empty file");
    const std::size_t dim = detail::parse_header(ls[0], 'f', path);
    std::vector<double> flat;
    std::vector<std::size_t> labels;
    std::size_t max_label = 0;
    for (std::size_t li = 1; li < ls.size(); ++li) {
        const std::size_t line_no = li + 1;
        if (ls[li].empty()) continue;
        const auto cells = io::split(ls[li], ',');
        if (cells.size() != dim + 1) throw FormatError(path, "line", line_no, "wrong column count");
        std::size_t y = 0;
        if (!io::parse_size(cells[0], y)) throw FormatError(path, "line", line_no, "bad label");
        for (std::size_t k = 0; k < dim; ++k) {
            double v = 0.0;
            if (!io::parse_double(cells[k + 1], v) || !std::isfinite(v))
                throw FormatError(path, "line", line_no, "bad feature f" + std::to_string(k));
            flat.push_back(v);
        }
        labels.push_back(y);
        max_label = std::max(max_label, y);
    }
    if (labels.empty()) throw FormatError(path, "line", 2, "no data rows");
    if (classes == 0) classes = std::max<std::size_t>(2, max_label + 1);
    if (max_label >= classes) throw FormatError(path, "line", 0, "label exceeds class count");
    const std::size_t n = labels.size();
    return Dataset{nn::Tensor(n, dim, std::move(flat)), LabelVector(std::move(labels), classes), std::nullopt};
}

inline std::string dataset_csv(const Dataset& d) {
    std::string out = "label";
    for (std::size_t k = 0; k < d.dim(); ++k) out += ",f" + std::to_string(k);
    out += '\n';
    for (std::size_t j = 0; j < d.size(); ++j) {
        out += std::to_string(d.labels[j]);
        for (double v : d.features.row(j)) out += ',' + io::format_double(v);
        out += '\n';
    }
    return out;
}

}  // namespace cmi::data
