// cmi: score classifier output distributions, train CE/CMIC models, attack
// them, and emit plot-ready CSV.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/format error,
// 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmi/attacks.hpp"
#include "cmi/checkpoint.hpp"
#include "cmi/config.hpp"
#include "cmi/data.hpp"
#include "cmi/io.hpp"
#include "cmi/metrics.hpp"
#include "cmi/simplex.hpp"
#include "cmi/table1.hpp"
#include "cmi/trainer.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

/// Thrown for bad command-line combinations detected after parsing.
struct UsageError : cmi::Error {
    using cmi::Error::Error;
};

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        std::cout.flush();
    } else {
        cmi::io::write_file(out_path, text);
    }
}

ordered_json json_number_or_null(std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json report_json(const cmi::MetricsReport& r) {
    return {{"cmi", r.cmi},
            {"gamma", r.gamma},
            {"ncmi", json_number_or_null(r.ncmi)},
            {"gamma_prime", r.gamma_prime},
            {"gamma_double_prime", r.gamma_double_prime},
            {"eps_expected", r.eps_expected},
            {"eps_top1", r.eps_top1},
            {"ce_bound", r.ce_bound},
            {"n", r.n},
            {"c", r.c}};
}

std::string report_csv(const cmi::MetricsReport& r) {
    using cmi::io::format_double;
    return "cmi,gamma,ncmi,gamma_prime,gamma_double_prime,eps_expected,eps_top1,ce_bound,n,c\n" +
           format_double(r.cmi) + ',' + format_double(r.gamma) + ',' +
           (r.ncmi ? format_double(*r.ncmi) : std::string("undefined")) + ',' + format_double(r.gamma_prime) + ',' +
           format_double(r.gamma_double_prime) + ',' + format_double(r.eps_expected) + ',' +
           format_double(r.eps_top1) + ',' + format_double(r.ce_bound) + ',' + std::to_string(r.n) + ',' +
           std::to_string(r.c) + '\n';
}

// Dataset sources shared by train / attack / simplex.
struct DataArgs {
    std::string csv;
    std::string idx_images;
    std::string idx_labels;
    std::size_t classes = 0;

    void add(CLI::App* app, const std::string& prefix, const std::string& what) {
        app->add_option("--" + prefix + "csv", csv, what + " dataset CSV (label,f0,...)");
        app->add_option("--" + prefix + "idx-images", idx_images, what + " IDX image file");
        app->add_option("--" + prefix + "idx-labels", idx_labels, what + " IDX label file");
    }

    bool given() const { return !csv.empty() || !idx_images.empty() || !idx_labels.empty(); }

    cmi::data::Dataset load(std::vector<std::string>& inputs) const {
        if (!csv.empty() && (!idx_images.empty() || !idx_labels.empty()))
            throw UsageError("give either a dataset CSV or an IDX pair, not both");
        if (!csv.empty()) {
            inputs.push_back(csv);
            return cmi::data::load_dataset_csv(csv, classes);
        }
        if (idx_images.empty() || idx_labels.empty()) throw UsageError("IDX input needs both images and labels");
        inputs.push_back(idx_images);
        inputs.push_back(idx_labels);
        return cmi::data::load_idx(idx_images, idx_labels, classes);
    }
};

std::vector<double> parse_budgets(const std::string& s) {
    std::vector<double> out;
    for (auto item : cmi::io::split(s, ',')) {
        double v = 0.0;
        if (!cmi::io::parse_double(item, v) || !(v >= 0.0)) throw UsageError("bad budget '" + std::string(item) + "'");
        out.push_back(v);
    }
    return out;
}

cmi::simplex::Triple parse_triple(const std::string& s) {
    const auto items = cmi::io::split(s, ',');
    if (items.size() != 3) throw UsageError("--classes needs exactly three indices");
    cmi::simplex::Triple t{};
    for (std::size_t i = 0; i < 3; ++i)
        if (!cmi::io::parse_size(items[i], t[i])) throw UsageError("bad class index '" + std::string(items[i]) + "'");
    if (t[0] == t[1] || t[0] == t[2] || t[1] == t[2]) throw UsageError("--classes must be three distinct indices");
    return t;
}

// ---------------------------------------------------------------------------

struct MetricsCmd {
    std::string probs;
    bool csv = false;
    std::string out;

    int run() const {
        const auto loaded = cmi::data::load_probmatrix_csv(probs);
        if (loaded.renormalized_rows > 0)
            std::cerr << "warning: " << loaded.renormalized_rows << " row(s) renormalized (sum off by > 1e-6)\n";
        const auto set = cmi::centroids(loaded.probs, loaded.labels, cmi::EmptyClassPolicy::Skip);
        for (std::size_t c = 0; c < set.classes(); ++c)
            if (!set.defined(c)) std::cerr << "warning: class " << c << " has no samples\n";
        const auto report = cmi::metrics_report(loaded.probs, loaded.labels, cmi::EmptyClassPolicy::Skip);
        emit(out, csv ? report_csv(report) : report_json(report).dump(2) + '\n');
        return 0;
    }
};

struct TrainCmd {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string mode;
    DataArgs train_data;
    DataArgs eval_data;
    std::vector<double> blobs;  // C, per_class, dim, spread
    double blobs_radius = 1.0;
    std::uint64_t blobs_seed = 1;
    std::string normalize = "none";
    std::string out_dir;

    int run() {
        cmi::train::TrainConfig cfg;
        if (!config_path.empty()) cfg = cmi::config::load(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value");
            cmi::config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!mode.empty()) {
            cfg.mode = cmi::train::parse_mode(mode);
            if (cfg.mode == cmi::train::Mode::CE) cfg.lambda = cfg.beta = 0.0;
        }
        cfg.validate();

        std::vector<std::string> inputs;
        if (!config_path.empty()) inputs.push_back(config_path);
        cmi::data::Dataset train, eval;
        if (!blobs.empty()) {
            if (train_data.given()) throw UsageError("--blobs and a training dataset are mutually exclusive");
            if (blobs.size() != 4) throw UsageError("--blobs expects C,per_class,dim,spread");
            const auto c = static_cast<std::size_t>(blobs[0]);
            const auto per = static_cast<std::size_t>(blobs[1]);
            const auto dim = static_cast<std::size_t>(blobs[2]);
            train = cmi::data::gen_blobs(c, per, dim, blobs[3], blobs_seed, blobs_radius);
            eval = eval_data.given() ? eval_data.load(inputs)
                                     : cmi::data::gen_blobs(c, per, dim, blobs[3], blobs_seed + 1, blobs_radius);
        } else {
            if (!train_data.given()) throw UsageError("no training data: use --blobs or --train-csv / --train-idx-*");
            train = train_data.load(inputs);
            eval = eval_data.given() ? eval_data.load(inputs) : train;
        }
        if (eval.classes() != train.classes()) {
            const std::size_t c = std::max(eval.classes(), train.classes());
            train.labels = cmi::LabelVector({train.labels.values().begin(), train.labels.values().end()}, c);
            eval.labels = cmi::LabelVector({eval.labels.values().begin(), eval.labels.values().end()}, c);
        }
        if (normalize != "none") {
            const auto stats = normalize == "minmax"        ? cmi::data::fit_minmax(train.features)
                               : normalize == "standardize" ? cmi::data::fit_standardize(train.features)
                                                            : throw UsageError("--normalize: none, minmax or standardize");
            cmi::data::apply_stats(train, stats);
            cmi::data::apply_stats(eval, stats);
        }

        fs::create_directories(out_dir);
        const std::string curve_path = (fs::path(out_dir) / "curve.csv").string();
        std::ofstream curve(curve_path, std::ios::binary | std::ios::trunc);
        if (!curve) throw cmi::Error("cannot write " + curve_path);
        curve << cmi::train::kEvolutionCsvHeader << '\n' << std::flush;

        const bool with_q = cfg.mode == cmi::train::Mode::CMIC;
        auto result = cmi::train::run_training(cfg, train, eval, [&](const auto& rec, const auto&) {
            curve << cmi::train::evolution_csv_row(rec) << '\n' << std::flush;
            std::cerr << "epoch " << rec.epoch << " loss " << rec.train_loss << " ncmi " << rec.ncmi << " top1-err "
                      << rec.eps_top1 << '\n';
        });
        curve.close();

        const std::string ck_path = (fs::path(out_dir) / "checkpoint.json").string();
        cmi::save_checkpoint(ck_path, cmi::make_checkpoint(result.state, with_q));

        ordered_json log = ordered_json::array();
        for (const auto& r : result.log) {
            log.push_back({{"epoch", r.epoch},
                           {"cmi", r.cmi},
                           {"gamma", r.gamma},
                           {"ncmi", std::isfinite(r.ncmi) ? ordered_json(r.ncmi) : ordered_json(nullptr)},
                           {"eps_top1", r.eps_top1},
                           {"eps_expected", r.eps_expected},
                           {"ce_bound", r.ce_bound},
                           {"train_loss", r.train_loss}});
        }
        const std::string log_path = (fs::path(out_dir) / "evolution.json").string();
        cmi::io::write_file(log_path, log.dump(2) + '\n');

        cmi::tools::Manifest m("train");
        m.set("config", cmi::config::to_json(cfg));
        m.set("seed", cfg.seed);
        if (!blobs.empty())
            m.set("blobs", {{"classes", blobs[0]}, {"per_class", blobs[1]}, {"dim", blobs[2]}, {"spread", blobs[3]},
                            {"radius", blobs_radius}, {"seed", blobs_seed}});
        m.set("normalize", normalize);
        for (const auto& in : inputs) m.add_input(in);
        m.add_output(curve_path);
        m.add_output(log_path);
        m.add_output(ck_path);
        m.write((fs::path(out_dir) / "manifest.json").string());
        return 0;
    }
};

struct AttackCmd {
    std::string checkpoint;
    DataArgs data;
    std::string kind = "fgsm";
    std::string budgets = "0.05,0.1,0.15,0.2,0.25,0.3,0.35";
    int iterations = 5;
    double step = 0.0;
    bool no_random_start = false;
    std::uint64_t seed = 0;
    std::string out;

    int run() const {
        const auto ck = cmi::load_checkpoint(checkpoint);
        std::vector<std::string> inputs;
        cmi::data::Dataset d = data.load(inputs);
        if (d.dim() != ck.model.input_dim())
            throw cmi::FormatError("checkpoint expects " + std::to_string(ck.model.input_dim()) +
                                   " features, dataset has " + std::to_string(d.dim()));
        if (d.classes() > ck.model.output_dim())
            throw cmi::FormatError("dataset has more classes than the checkpoint's output layer");
        d.labels = cmi::LabelVector({d.labels.values().begin(), d.labels.values().end()}, ck.model.output_dim());

        const auto list = parse_budgets(budgets);
        cmi::attack::AttackConfig base;
        base.iterations = iterations;
        base.step_size = step;
        base.random_start = !no_random_start;
        const double clean = cmi::attack::top1_accuracy(ck.model, d.features, d.labels);
        std::cerr << "clean accuracy: " << cmi::io::format_double(clean) << '\n';
        const auto curve = cmi::attack::robust_accuracy_curve(ck.model, d, list, cmi::attack::parse_kind(kind), base, seed);
        emit(out, cmi::attack::curve_csv(curve));
        return 0;
    }
};

struct SimplexCmd {
    std::string probs;
    std::string checkpoint;
    DataArgs data;
    std::string classes;
    bool all_rows = false;
    std::string out;

    int run() const {
        const auto triple = parse_triple(classes);
        const auto keep = [&](std::size_t label) {
            return all_rows || label == triple[0] || label == triple[1] || label == triple[2];
        };
        std::string csv = "label,u,v\n";
        auto row = [&](std::size_t label, cmi::simplex::Point p) {
            csv += std::to_string(label) + ',' + cmi::io::format_double(p.u) + ',' + cmi::io::format_double(p.v) + '\n';
        };
        std::size_t skipped = 0;
        if (!checkpoint.empty()) {
            if (!probs.empty()) throw UsageError("give either a probability CSV or --checkpoint, not both");
            const auto ck = cmi::load_checkpoint(checkpoint);
            std::vector<std::string> inputs;
            const auto d = data.load(inputs);
            if (d.dim() != ck.model.input_dim()) throw cmi::FormatError("checkpoint/dataset feature width mismatch");
            auto pass = cmi::nn::forward(ck.model, d.features);
            const auto& logits = pass.tape.value(pass.logits);
            for (std::size_t j = 0; j < d.size(); ++j)
                if (keep(d.labels[j])) row(d.labels[j], cmi::simplex::project_logits(logits.row(j), triple));
        } else {
            if (probs.empty()) throw UsageError("simplex needs a probability CSV or --checkpoint with a dataset");
            const auto loaded = cmi::data::load_probmatrix_csv(probs);
            for (std::size_t j = 0; j < loaded.probs.rows(); ++j) {
                if (!keep(loaded.labels[j])) continue;
                const auto p = cmi::simplex::project_probs(loaded.probs.row(j), triple);
                if (p) row(loaded.labels[j], *p);
                else ++skipped;
            }
        }
        if (skipped > 0) std::cerr << "warning: " << skipped << " row(s) with no mass on the selected classes skipped\n";
        emit(out, csv);
        return 0;
    }
};

struct Table1Cmd {
    bool json = false;

    int run() const {
        const auto r = cmi::table1::report();
        using cmi::io::format_double;
        if (json) {
            ordered_json rows = ordered_json::array();
            for (std::size_t i = 0; i < cmi::table1::kRows.size(); ++i) {
                const auto& row = cmi::table1::kRows[i];
                rows.push_back({{"model", row.model},
                                {"cmi", row.cmi},
                                {"gamma", row.gamma},
                                {"ncmi_published", row.ncmi},
                                {"ncmi_recomputed", r.recomputed_ncmi[i]},
                                {"discrepancy", r.discrepancy[i]},
                                {"error_top1", row.error_top1}});
            }
            ordered_json doc = {{"rows", rows},
                                {"max_discrepancy", r.max_discrepancy},
                                {"rows_within_0.0005", r.rows_within_tolerance},
                                {"pearson_published_ncmi", r.pearson_published},
                                {"pearson_recomputed_ncmi", r.pearson_recomputed},
                                {"pearson_reference", cmi::table1::kPublishedPearson}};
            std::cout << doc.dump(2) << '\n';
            return 0;
        }
        std::cout << "model,cmi,gamma,ncmi_published,ncmi_recomputed,discrepancy,error_top1\n";
        for (std::size_t i = 0; i < cmi::table1::kRows.size(); ++i) {
            const auto& row = cmi::table1::kRows[i];
            std::cout << row.model << ',' << format_double(row.cmi) << ',' << format_double(row.gamma) << ','
                      << format_double(row.ncmi) << ',' << format_double(r.recomputed_ncmi[i]) << ','
                      << format_double(r.discrepancy[i]) << ',' << format_double(row.error_top1) << '\n';
        }
        std::cout << "# max |cmi/gamma - ncmi|: " << format_double(r.max_discrepancy) << " (" << r.rows_within_tolerance
                  << "/" << cmi::table1::kRows.size() << " rows within 0.0005)\n"
                  << "# pearson(ncmi, error), published ncmi: " << format_double(r.pearson_published) << '\n'
                  << "# pearson(ncmi, error), recomputed ncmi: " << format_double(r.pearson_recomputed) << '\n';
        return 0;
    }
};

struct GendataCmd {
    std::vector<double> blobs;
    double radius = 1.0;
    std::uint64_t seed = 1;
    std::string format = "csv";
    std::string fixture;
    std::string out_dir;

    int run() const {
        fs::create_directories(out_dir);
        cmi::tools::Manifest m("gendata");
        m.set("seed", seed);
        std::vector<std::string> outputs;
        if (!fixture.empty()) {
            if (!blobs.empty()) throw UsageError("--fixture and --blobs are mutually exclusive");
            m.set("fixture", fixture);
            if (fixture == "ln2-cmi") {
                const cmi::ProbMatrix p(std::vector<std::vector<double>>{{1.0, 0.0}, {0.0, 1.0}});
                const cmi::LabelVector y({0, 0}, 2);
                outputs.push_back((fs::path(out_dir) / "ln2-cmi.csv").string());
                cmi::io::write_file(outputs.back(), cmi::data::probmatrix_csv(p, y));
            } else if (fixture == "idx-mini") {
                const cmi::data::Dataset d{cmi::nn::Tensor(1, 1, 1.0), cmi::LabelVector({7}, 10), std::nullopt};
                outputs.push_back((fs::path(out_dir) / "idx-mini-images.idx").string());
                outputs.push_back((fs::path(out_dir) / "idx-mini-labels.idx").string());
                cmi::data::write_idx(d, 1, 1, outputs[0], outputs[1]);
            } else {
                throw UsageError("unknown fixture '" + fixture + "' (ln2-cmi, idx-mini)");
            }
        } else {
            if (blobs.size() != 4) throw UsageError("--blobs expects C,per_class,dim,spread");
            const auto d = cmi::data::gen_blobs(static_cast<std::size_t>(blobs[0]), static_cast<std::size_t>(blobs[1]),
                                                static_cast<std::size_t>(blobs[2]), blobs[3], seed, radius);
            m.set("blobs", {{"classes", blobs[0]}, {"per_class", blobs[1]}, {"dim", blobs[2]}, {"spread", blobs[3]},
                            {"radius", radius}});
            if (format == "csv") {
                outputs.push_back((fs::path(out_dir) / "blobs.csv").string());
                cmi::io::write_file(outputs.back(), cmi::data::dataset_csv(d));
            } else if (format == "idx") {
                // IDX stores bytes in [0, 1] after min-max scaling, as 1 x dim images.
                auto scaled = d;
                cmi::data::apply_stats(scaled, cmi::data::fit_minmax(scaled.features));
                outputs.push_back((fs::path(out_dir) / "blobs-images.idx").string());
                outputs.push_back((fs::path(out_dir) / "blobs-labels.idx").string());
                cmi::data::write_idx(scaled, 1, scaled.dim(), outputs[0], outputs[1]);
            } else {
                throw UsageError("--format: csv or idx");
            }
        }
        for (const auto& o : outputs) m.add_output(o);
        m.write((fs::path(out_dir) / "manifest.json").string());
        for (const auto& o : outputs) std::cout << o << '\n';
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CMI / NCMI metrics and CMI-constrained training"};
    app.require_subcommand(1);

    MetricsCmd metrics;
    auto* m = app.add_subcommand("metrics", "Score a probability-matrix CSV");
    m->add_option("probs", metrics.probs, "CSV with header label,p0,...,p{C-1}")->required();
    auto* json_flag = m->add_flag("--json", "JSON output (default)");
    m->add_flag("--csv", metrics.csv, "one-row CSV output")->excludes(json_flag);
    m->add_option("-o,--out", metrics.out, "output file (default stdout)");

    TrainCmd train;
    auto* t = app.add_subcommand("train", "Train an MLP with CE or CMIC loss");
    t->add_option("-c,--config", train.config_path, "key = value config file");
    t->add_option("--set", train.overrides, "override a config key (key=value), repeatable");
    t->add_option("--mode", train.mode, "ce or cmic (ce zeroes lambda and beta)");
    train.train_data.add(t, "train-", "training");
    train.eval_data.add(t, "eval-", "evaluation");
    t->add_option("--blobs", train.blobs, "Gaussian blobs C,per_class,dim,spread")->delimiter(',');
    t->add_option("--blobs-radius", train.blobs_radius, "distance of blob centres from the origin");
    t->add_option("--blobs-seed", train.blobs_seed, "blob seed (evaluation set uses seed + 1)");
    t->add_option("--normalize", train.normalize, "none, minmax or standardize (fit on training data)");
    t->add_option("-o,--out", train.out_dir, "run directory")->required();

    AttackCmd attack;
    auto* a = app.add_subcommand("attack", "Robust accuracy of a checkpoint under FGSM/PGD");
    a->add_option("--checkpoint", attack.checkpoint, "checkpoint JSON")->required();
    attack.data.add(a, "", "evaluation");
    a->add_option("--attack", attack.kind, "fgsm or pgd");
    a->add_option("--budgets", attack.budgets, "comma-separated ascending L-inf budgets");
    a->add_option("--iterations", attack.iterations, "PGD iterations");
    a->add_option("--step", attack.step, "PGD step size (default 2.5 * budget / iterations)");
    a->add_flag("--no-random-start", attack.no_random_start, "start PGD at the clean input");
    a->add_option("--seed", attack.seed, "PGD random-start seed");
    a->add_option("-o,--out", attack.out, "output CSV (default stdout)");

    SimplexCmd simplex;
    auto* s = app.add_subcommand("simplex", "Project three classes onto the 2-simplex");
    s->add_option("probs", simplex.probs, "probability-matrix CSV");
    s->add_option("--checkpoint", simplex.checkpoint, "checkpoint JSON (uses softmax over three logits)");
    simplex.data.add(s, "", "input");
    s->add_option("--classes", simplex.classes, "three distinct class indices a,b,c")->required();
    s->add_flag("--all-rows", simplex.all_rows, "keep rows whose label is not among the three classes");
    s->add_option("-o,--out", simplex.out, "output CSV (default stdout)");

    Table1Cmd table1;
    auto* tb = app.add_subcommand("table1", "Consistency and correlation of the bundled ImageNet table");
    tb->add_flag("--bundled", "use the bundled table (the only source)");
    tb->add_flag("--json", table1.json, "JSON output");

    GendataCmd gendata;
    auto* g = app.add_subcommand("gendata", "Write synthetic datasets or test fixtures");
    g->add_option("--blobs", gendata.blobs, "Gaussian blobs C,per_class,dim,spread")->delimiter(',');
    g->add_option("--radius", gendata.radius, "distance of blob centres from the origin");
    g->add_option("--seed", gendata.seed, "random seed");
    g->add_option("--format", gendata.format, "csv or idx");
    g->add_option("--fixture", gendata.fixture, "ln2-cmi or idx-mini");
    g->add_option("-o,--out", gendata.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*m) return metrics.run();
        if (*t) return train.run();
        if (*a) return attack.run();
        if (*s) return simplex.run();
        if (*tb) return table1.run();
        if (*g) return gendata.run();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const cmi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const cmi::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const cmi::DegenerateSeparation& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const cmi::Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
