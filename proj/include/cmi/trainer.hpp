#pragma once

// Cross-entropy training with a CMI penalty and a separation reward,
// optimized by alternating SGD steps on the network parameters with
// refreshes of the per-class reference distributions {Q_c}.
//
//   J_B = mean_B H(y, P_x) + lambda mean_B D(P_x || Q_y)
//         - beta / |B|^2 sum_{(x,y),(u,v) in B} 1{y != v} H(P_x, P_u)

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmi/data.hpp"
#include "cmi/error.hpp"
#include "cmi/io.hpp"
#include "cmi/metrics.hpp"
#include "cmi/nn.hpp"
#include "cmi/numerics.hpp"

namespace cmi::train {

enum class Mode { CE, CMIC };

inline std::string to_string(Mode m) { return m == Mode::CE ? "ce" : "cmic"; }

inline Mode parse_mode(std::string_view s) {
    if (s == "ce" || s == "CE") return Mode::CE;
    if (s == "cmic" || s == "CMIC") return Mode::CMIC;
    throw ConfigError("unknown mode '" + std::string(s) + "' (expected ce or cmic)");
}

struct TrainConfig {
    Mode mode = Mode::CMIC;
    double lambda = 0.7;
    double beta = 0.4;
    int epochs = 200;
    std::size_t batch_size = 64;
    std::size_t class_batch_size = 8;
    double q_momentum = 0.9999;
    std::size_t q_update_every = 1;  // Q refresh period, in theta batches
    bool freeze_separation_target = false;

    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_milestones{60, 120, 160};
    double lr_factor = 0.1;
    bool lr_every_epoch = false;

    std::vector<std::size_t> hidden{64};
    std::uint64_t seed = 0;

    /// Constraint level r = beta / lambda (reporting only).
    double ratio() const { return lambda > 0.0 ? beta / lambda : 0.0; }

    void validate() const {
        if (mode == Mode::CE && (lambda != 0.0 || beta != 0.0))
            throw ConfigError("ce mode requires lambda = beta = 0");
        if (mode == Mode::CMIC && !(lambda > 0.0)) throw ConfigError("cmic mode requires lambda > 0");
        if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
        if (epochs < 0) throw ConfigError("epochs must be non-negative");
        if (batch_size < 1 || class_batch_size < 1 || q_update_every < 1)
            throw ConfigError("batch sizes and q_update_every must be at least 1");
        if (!(q_momentum >= 0.0 && q_momentum < 1.0)) throw ConfigError("q_momentum must lie in [0, 1)");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (!(lr_factor > 0.0)) throw ConfigError("lr_factor must be positive");
    }
};

/// Per-class reference distributions Q_c, initially uniform.
struct QState {
    std::vector<ProbVector> q;

    static QState uniform(std::size_t classes) { return QState{std::vector<ProbVector>(classes, ProbVector::uniform(classes))}; }
    std::size_t classes() const noexcept { return q.size(); }
};

/// Individual J_B terms for inspection; `total` is the differentiable node.
struct LossTerms {
    nn::Var total;
    double cross_entropy = 0.0;
    double concentration = 0.0;  // mean D(P_x || Q_y)
    double separation = 0.0;     // pairwise mean H(P_x, P_u) over differing labels
    bool degenerate_batch = false;
};

namespace detail {

inline nn::Tensor onehot(const LabelVector& y) {
    nn::Tensor t(y.size(), y.classes());
    for (std::size_t j = 0; j < y.size(); ++j) t(j, y[j]) = 1.0;
    return t;
}

inline nn::Tensor label_mismatch_mask(const LabelVector& y) {
    nn::Tensor m(y.size(), y.size());
    for (std::size_t j = 0; j < y.size(); ++j)
        for (std::size_t k = 0; k < y.size(); ++k) m(j, k) = y[j] != y[k] ? 1.0 : 0.0;
    return m;
}

inline double scalar(const nn::Tape& t, nn::Var v) { return t.value(v)[0]; }

}  // namespace detail

/// Records J_B on `tape` for batch probabilities `probs` (N x C). Q is a
/// constant. With freeze_target the second argument of the pairwise cross
/// entropy receives no gradient.
inline LossTerms cmic_loss(nn::Tape& tape, nn::Var probs, const LabelVector& labels, const QState& q, double lambda,
                           double beta, bool freeze_target = false) {
    // Shape copied out: recording new nodes may reallocate the tape.
    const std::size_t rows = tape.value(probs).rows(), cols = tape.value(probs).cols();
    if (rows != labels.size()) throw DimensionMismatch("batch label count", rows, labels.size());
    if (cols != labels.classes() || q.classes() != labels.classes())
        throw DimensionMismatch("class count", labels.classes(), cols);
    const double n = static_cast<double>(rows);

    LossTerms terms;
    const nn::Var logp = tape.clamp_log(probs);
    const nn::Var ce = tape.scale(tape.sum(tape.mul(tape.constant(detail::onehot(labels)), logp)), -1.0 / n);
    terms.cross_entropy = detail::scalar(tape, ce);
    nn::Var total = ce;

    if (lambda != 0.0) {
        nn::Tensor logq(rows, cols);
        for (std::size_t j = 0; j < rows; ++j)
            for (std::size_t i = 0; i < cols; ++i) logq(j, i) = clamp_log(q.q[labels[j]][i]);
        const nn::Var diff = tape.sub(logp, tape.constant(std::move(logq)));
        const nn::Var kl = tape.scale(tape.sum(tape.mul(probs, diff)), 1.0 / n);
        terms.concentration = detail::scalar(tape, kl);
        total = tape.add(total, tape.scale(kl, lambda));
    }
    if (beta != 0.0) {
        terms.degenerate_batch = rows < 2;
        const nn::Var target = freeze_target ? tape.detach(logp) : logp;
        const nn::Var partner_logs = tape.matmul(tape.constant(detail::label_mismatch_mask(labels)), target);
        const nn::Var sep = tape.scale(tape.sum(tape.mul(probs, partner_logs)), -1.0 / (n * n));
        terms.separation = detail::scalar(tape, sep);
        total = tape.sub(total, tape.scale(sep, beta));
    }
    terms.total = total;
    return terms;
}

/// J_B evaluated directly from probability rows.
inline double cmic_loss_value(const ProbMatrix& p, const LabelVector& y, const QState& q, double lambda, double beta) {
    check_paired(p, y);
    const std::size_t n = p.rows();
    double ce = 0.0, kl = 0.0, sep = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        ce += cross_entropy_onehot(y[j], p.row(j));
        kl += kl_divergence(p.row(j), q.q.at(y[j]));
        for (std::size_t k = 0; k < n; ++k)
            if (y[j] != y[k]) sep += cross_entropy(p.row(j), p.row(k));
    }
    const double nn = static_cast<double>(n);
    return ce / nn + lambda * kl / nn - beta * sep / (nn * nn);
}

/// q_c <- m q_c + (1 - m) mean{P_x : x in batch, label c}, renormalized.
/// Classes absent from the batch keep their distribution.
inline void update_q(QState& q, const ProbMatrix& probs, const LabelVector& labels, double m) {
    check_paired(probs, labels);
    if (q.classes() != probs.classes()) throw DimensionMismatch("Q class count", probs.classes(), q.classes());
    if (!(m >= 0.0 && m <= 1.0)) throw InvalidInput("Q momentum must lie in [0, 1]");
    const CentroidSet means = centroids(probs, labels, EmptyClassPolicy::Skip);
    for (std::size_t c = 0; c < q.classes(); ++c) {
        if (!means.defined(c)) continue;
        std::vector<double> next(q.classes());
        double total = 0.0;
        for (std::size_t i = 0; i < next.size(); ++i) total += next[i] = m * q.q[c][i] + (1.0 - m) * means[c][i];
        for (double& v : next) v /= total;
        q.q[c] = ProbVector(std::move(next));
    }
}

struct EvolutionRecord {
    int epoch = 0;
    double cmi = 0.0;
    double gamma = 0.0;
    double ncmi = 0.0;  // NaN when gamma == 0
    double eps_top1 = 0.0;
    double eps_expected = 0.0;
    double ce_bound = 0.0;
    double train_loss = 0.0;
};

using EvolutionLog = std::vector<EvolutionRecord>;

inline constexpr const char* kEvolutionCsvHeader = "epoch,cmi,gamma,ncmi,eps_top1,eps_expected,ce_bound,train_loss";

inline std::string evolution_csv_row(const EvolutionRecord& r) {
    using io::format_double;
    return std::to_string(r.epoch) + ',' + format_double(r.cmi) + ',' + format_double(r.gamma) + ',' +
           format_double(r.ncmi) + ',' + format_double(r.eps_top1) + ',' + format_double(r.eps_expected) + ',' +
           format_double(r.ce_bound) + ',' + format_double(r.train_loss);
}

inline std::string evolution_csv(const EvolutionLog& log) {
    std::string out = std::string(kEvolutionCsvHeader) + '\n';
    for (const auto& r : log) out += evolution_csv_row(r) + '\n';
    return out;
}

struct EpochStats {
    std::vector<double> batch_losses;
    std::size_t degenerate_batches = 0;

    double mean_loss() const {
        if (batch_losses.empty()) return 0.0;
        double s = 0.0;
        for (double v : batch_losses) s += v;
        return s / static_cast<double>(batch_losses.size());
    }
};

/// Mutable state of one run.
struct TrainState {
    nn::MLPModel model;
    QState q;
    nn::OptimizerState optimizer;
    std::mt19937_64 rng;
    int epoch = 0;  // completed epochs
};

inline TrainState init_state(const TrainConfig& cfg, std::size_t input_dim, std::size_t classes) {
    cfg.validate();
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(classes);
    TrainState s;
    s.model = nn::MLPModel::init(widths, cfg.seed);
    s.q = QState::uniform(classes);
    s.optimizer = nn::OptimizerState::for_model(s.model, cfg.lr, cfg.momentum, cfg.weight_decay,
                                                {cfg.lr_milestones, cfg.lr_factor, cfg.lr_every_epoch});
    s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
}

/// One pass over the training set: for every mini-batch, an SGD step on J_B
/// with Q fixed, then (CMIC mode) a Q refresh from class-stratified batches
/// evaluated at the new parameters.
inline EpochStats train_epoch(TrainState& s, const data::Dataset& train, const TrainConfig& cfg) {
    cfg.validate();
    train.check();
    const auto members = data::class_members(train.labels);
    if (cfg.mode == Mode::CMIC) {
        for (std::size_t c = 0; c < members.size(); ++c)
            if (members[c].empty()) throw ConfigError("class " + std::to_string(c) + " absent from training set");
    }
    EpochStats stats;
    const data::BatchPlan plan(train.size(), cfg.batch_size, s.rng);
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
        const auto idx = plan.batch(b);
        const LabelVector y = data::gather_labels(train.labels, idx);
        nn::ForwardPass pass = nn::forward(s.model, data::gather_rows(train.features, idx));
        const nn::Var probs = pass.tape.softmax_rows(pass.logits);
        const LossTerms terms = cmic_loss(pass.tape, probs, y, s.q, cfg.lambda, cfg.beta, cfg.freeze_separation_target);
        if (terms.degenerate_batch) ++stats.degenerate_batches;
        stats.batch_losses.push_back(pass.tape.value(terms.total)[0]);
        const nn::Gradients grads = nn::backward(pass, terms.total);
        nn::sgd_step(s.model, grads, s.optimizer);

        if (cfg.mode == Mode::CMIC && (b + 1) % cfg.q_update_every == 0) {
            const auto strata = data::stratified_batches(members, cfg.class_batch_size, s.rng);
            std::vector<std::size_t> all;
            for (const auto& sb : strata) all.insert(all.end(), sb.begin(), sb.end());
            const ProbMatrix p = nn::predict_proba(s.model, data::gather_rows(train.features, all));
            update_q(s.q, p, data::gather_labels(train.labels, all), cfg.q_momentum);
        }
    }
    return stats;
}

/// Metrics of the model's output distributions over `eval`.
inline MetricsReport evaluate(const nn::MLPModel& model, const data::Dataset& eval) {
    eval.check();
    return metrics_report(nn::predict_proba(model, eval.features), eval.labels);
}

inline EvolutionRecord evaluate_epoch(const nn::MLPModel& model, const data::Dataset& eval, int epoch,
                                      double train_loss) {
    const MetricsReport r = evaluate(model, eval);
    return EvolutionRecord{epoch, r.cmi, r.gamma, r.ncmi.value_or(std::numeric_limits<double>::quiet_NaN()),
                           r.eps_top1, r.eps_expected, r.ce_bound, train_loss};
}

struct TrainResult {
    TrainState state;
    EvolutionLog log;
};

/// Runs cfg.epochs epochs, evaluating on `eval` after each and invoking
/// `on_epoch` with the new record.
inline TrainResult run_training(const TrainConfig& cfg, const data::Dataset& train, const data::Dataset& eval,
                                const std::function<void(const EvolutionRecord&, const TrainState&)>& on_epoch = {}) {
    if (train.classes() != eval.classes()) throw DimensionMismatch("eval class count", train.classes(), eval.classes());
    if (train.dim() != eval.dim()) throw DimensionMismatch("eval feature width", train.dim(), eval.dim());
    TrainResult out{init_state(cfg, train.dim(), train.classes()), {}};
    for (int t = 1; t <= cfg.epochs; ++t) {
        const EpochStats stats = train_epoch(out.state, train, cfg);
        out.state.epoch = t;
        nn::schedule_step(out.state.optimizer, t);
        out.log.push_back(evaluate_epoch(out.state.model, eval, t, stats.mean_loss()));
        if (on_epoch) on_epoch(out.log.back(), out.state);
    }
    return out;
}

}  // namespace cmi::train
