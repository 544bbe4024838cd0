#include "hcc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "hcc/checkpoint.hpp"
#include "hcc/corpus.hpp"
#include "hcc/cutter.hpp"
#include "hcc/error.hpp"
#include "hcc/geometry.hpp"
#include "hcc/kv_config.hpp"
#include "hcc/report.hpp"
#include "hcc/rng.hpp"
#include "hcc/stats.hpp"
#include "hcc/synth.hpp"
#include "hcc/train.hpp"
#include "hcc/uncertainty.hpp"

namespace hcc {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string input;
    std::string output;
    std::string config;
    std::string model;
    std::string predictions;
    std::string cuts;
    std::string reference;
    std::string history;
    std::string mode = "model";
    std::string format = "csv";
    std::string label_mode = "strict";
    std::optional<std::uint64_t> seed;
    std::optional<double> target_tokens;
    std::optional<int> traces;
    std::optional<int> epochs;
    double epsilon = kDefaultEpsilon;
    int bins = 10;
    int resamples = kDefaultResamples;
    int threads = 1;
    bool json = false;
    bool per_trace = false;
    bool verbose = false;
};

// Writes to `path`, or to `fallback` when the path is empty or "-".
void emit(const std::string& path, std::ostream& fallback, const std::function<void(std::ostream&)>& body) {
    if (path.empty() || path == "-") {
        body(fallback);
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream file(p, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot write " + path);
    body(file);
    if (!file) throw DataError("I/O failure writing " + path);
}

void emit_json(const std::string& path, std::ostream& fallback, const Json& j) {
    emit(path, fallback, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

fs::path output_dir(const Options& o) {
    if (o.output.empty()) throw CLI::ValidationError("--output", "a directory is required");
    fs::create_directories(o.output);
    return fs::path(o.output);
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw CLI::ValidationError(flag, "is required for this command");
}

Corpus load(const Options& o, bool check_invariants = true) {
    require(o.input, "--input");
    ParseOptions po;
    po.label_mode = o.label_mode == "lenient" ? LabelMode::lenient : LabelMode::strict;
    po.check_invariants = check_invariants;
    return parse_corpus(o.input, po);
}

BootstrapOptions bootstrap_options(const Options& o) {
    BootstrapOptions b;
    b.resamples = o.resamples;
    b.seed = o.seed.value_or(0);
    return b;
}

std::ifstream open_input(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(std::string("cannot open ") + what + ": " + path);
    return in;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Options& o, std::ostream& out) {
    const Corpus corpus = load(o, false);
    const auto report = validate_corpus(corpus);
    for (const auto& v : report.violations) out << v.field << ": " << v.message << '\n';
    out << report.violations.size() << " violations\n";
    return report.ok() ? kExitOk : kExitDataError;
}

int cmd_synth(const Options& o, std::ostream& out) {
    require(o.output, "--output");
    SynthConfig config;
    if (!o.config.empty()) apply_key_values(config, read_key_values(o.config));
    if (o.seed) config.seed = *o.seed;
    if (o.traces) config.trace_count = *o.traces;
    const Corpus corpus = generate(config);
    const auto summary = write_corpus(corpus, o.output);
    emit(fs::path(o.output).replace_extension(".synth.cfg").string(), out,
         [&](std::ostream& s) { s << describe(config); });
    out << "wrote " << summary.trace_count << " traces to " << o.output << '\n';
    return kExitOk;
}

int cmd_uncertainty(const Options& o, std::ostream& out) {
    const Corpus corpus = load(o);
    const fs::path dir = output_dir(o);
    const auto series = corpus_uncertainty(corpus);
    const bool annotated = !corpus.annotations.empty();
    if (o.json) {
        Json j;
        j["series"] = uncertainty_json(corpus, series);
        if (annotated) {
            j["curves"] = curves_json(progressive_curves(corpus, o.bins));
            j["boundary_quadruple"] = quadruple_json(boundary_quadruple(corpus));
            j["perturbation"] = perturbation_json(perturbation_stats(corpus));
        }
        emit_json((dir / "uncertainty.json").string(), out, j);
    } else {
        emit((dir / "uncertainty_series.csv").string(), out,
             [&](std::ostream& s) { write_uncertainty_csv(s, corpus, series); });
        if (annotated) {
            const auto curves = progressive_curves(corpus, o.bins);
            const auto quad = boundary_quadruple(corpus);
            const auto pert = perturbation_stats(corpus);
            emit((dir / "progressive_curves.csv").string(), out, [&](std::ostream& s) { write_curves_csv(s, curves); });
            emit((dir / "boundary_quadruple.csv").string(), out, [&](std::ostream& s) { write_quadruple_csv(s, quad); });
            emit((dir / "perturbation.csv").string(), out, [&](std::ostream& s) { write_perturbation_csv(s, pert); });
        }
    }
    if (!annotated) out << "no annotations: wrote per-sentence series only\n";
    out << "uncertainty diagnostics for " << corpus.traces.size() << " traces written to " << dir.string() << '\n';
    return kExitOk;
}

// Token-normalized displacement per segment, for the ECDF report.
std::array<std::vector<double>, 2> displacement_by_segment(const Corpus& corpus,
                                                           std::span<const GeometrySeries> series) {
    std::array<std::vector<double>, 2> out;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto* a = corpus.annotation_for(corpus.traces[i].id);
        if (a == nullptr) continue;
        for (std::size_t k = 0; k < series[i].size(); ++k) {
            out[a->retained(static_cast<int>(k) + 1) ? 0 : 1].push_back(series[i].disp_per_token[k]);
        }
    }
    return out;
}

int cmd_geometry(const Options& o, std::ostream& out) {
    const Corpus corpus = load(o);
    const fs::path dir = output_dir(o);
    const auto series = corpus_geometry(corpus, o.epsilon);
    const auto groups = displacement_by_segment(corpus, series);
    if (o.json) {
        Json j;
        j["epsilon"] = o.epsilon;
        j["series"] = geometry_json(corpus, series);
        j["group_means"] = group_means_json(corpus, series);
        Json e;
        for (int s = 0; s < 2; ++s) {
            if (groups[s].empty()) continue;
            Json pts = Json::array();
            for (const auto& p : ecdf(groups[s])) pts.push_back({p.x, p.fraction});
            e[segment_name(static_cast<Segment>(s))] = std::move(pts);
        }
        j["disp_per_token_ecdf"] = std::move(e);
        emit_json((dir / "geometry.json").string(), out, j);
    } else {
        emit((dir / "geometry_series.csv").string(), out,
             [&](std::ostream& s) { write_geometry_csv(s, corpus, series); });
        emit((dir / "group_means.csv").string(), out,
             [&](std::ostream& s) { write_group_means_csv(s, corpus, series); });
        emit((dir / "disp_per_token_ecdf.csv").string(), out, [&](std::ostream& s) {
            s << "segment,x,fraction\n";
            for (int seg = 0; seg < 2; ++seg) {
                if (groups[seg].empty()) continue;
                write_ecdf_csv(s, segment_name(static_cast<Segment>(seg)), ecdf(groups[seg]));
            }
        });
    }
    out << "geometry diagnostics for " << corpus.traces.size() << " traces written to " << dir.string() << '\n';
    return kExitOk;
}

int cmd_paired(const Options& o, std::ostream& out) {
    const Corpus corpus = load(o);
    if (corpus.annotations.empty()) throw DataError("paired statistics need annotated traces");
    const auto series = corpus_geometry(corpus, o.epsilon);
    auto metrics = geometry_pairs(corpus, series);

    // Sentence-level uncertainty rows alongside the geometry rows.
    const auto unc = corpus_uncertainty(corpus);
    MetricPairs nll{"sent_nll", {}}, ent{"sent_entropy", {}};
    for (std::size_t i = 0; i < unc.size(); ++i) {
        const auto* a = corpus.annotation_for(corpus.traces[i].id);
        if (a == nullptr) continue;
        double sums[2][2] = {{0, 0}, {0, 0}};
        int counts[2] = {0, 0};
        for (std::size_t k = 0; k < unc[i].size(); ++k) {
            const int g = a->retained(static_cast<int>(k) + 1) ? 1 : 0;  // 0 removed, 1 retained
            sums[0][g] += unc[i].sent_nll[k];
            sums[1][g] += unc[i].sent_entropy[k];
            ++counts[g];
        }
        auto mean = [&](int q, int g) -> std::optional<double> {
            if (counts[g] == 0) return std::nullopt;
            return sums[q][g] / counts[g];
        };
        nll.removed_retained.emplace_back(mean(0, 0), mean(0, 1));
        ent.removed_retained.emplace_back(mean(1, 0), mean(1, 1));
    }
    metrics.push_back(std::move(nll));
    metrics.push_back(std::move(ent));

    const auto options = bootstrap_options(o);
    const auto rows = paired_table(metrics, options);
    if (o.json) {
        emit_json(o.output, out, paired_json(rows, options));
    } else if (o.format == "text") {
        emit(o.output, out, [&](std::ostream& s) { write_paired_text(s, rows); });
    } else {
        emit(o.output, out, [&](std::ostream& s) { write_paired_csv(s, rows); });
    }
    return kExitOk;
}

HccConfig train_config(const Options& o, const Corpus& corpus) {
    HccConfig config;
    config.input_dim = corpus.metadata.dim;
    KeyValues kv;
    if (!o.config.empty()) kv = read_key_values(o.config);
    apply_key_values(config, kv);
    if (config.input_dim != corpus.metadata.dim) {
        throw DataError("config input_dim " + std::to_string(config.input_dim) + " differs from corpus dim " +
                        std::to_string(corpus.metadata.dim));
    }
    if (o.seed) config.seed = *o.seed;
    if (o.epochs) config.epochs = *o.epochs;
    return config;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    require(o.output, "--output");
    const Corpus corpus = load(o);
    const HccConfig config = train_config(o, corpus);
    const auto result = train(corpus, config);
    save_checkpoint(result.model, o.output);

    const std::string history =
        o.history.empty() ? fs::path(o.output).replace_extension(o.json ? ".history.json" : ".history.csv").string()
                          : o.history;
    if (o.json) {
        emit_json(history, out, history_json(result.history));
    } else {
        emit(history, out, [&](std::ostream& s) { write_history_csv(s, result.history); });
    }
    if (o.verbose) write_history_csv(err, result.history);
    const auto& last = result.history.back().mean;
    out << "trained " << config.epochs << " epochs on " << corpus.traces.size() << " traces; final loss "
        << csv_real(last.total) << " (cut " << csv_real(last.cut) << ")\n";
    return kExitOk;
}

std::vector<NamedPrediction> predict_all(const HccModel& model, const Corpus& corpus) {
    std::vector<NamedPrediction> preds(corpus.traces.size());
    const long n = static_cast<long>(corpus.traces.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) preds[i] = {corpus.traces[i].id, predict(model, corpus.traces[i])};
    return preds;
}

int cmd_predict(const Options& o, std::ostream& out) {
    require(o.model, "--model");
    const Corpus corpus = load(o);
    const HccModel model = load_checkpoint(o.model);
    const auto preds = predict_all(model, corpus);
    if (o.json) {
        emit_json(o.output, out, predictions_json(preds));
    } else {
        emit(o.output, out, [&](std::ostream& s) { write_predictions_csv(s, preds); });
    }
    if (!o.output.empty()) {
        BoundaryAccuracy acc;
        if (!corpus.annotations.empty()) acc = evaluate_boundaries(model, corpus);
        out << "predicted " << preds.size() << " traces";
        if (acc.traces > 0) {
            out << "; exact " << csv_real(acc.exact) << ", within one " << csv_real(acc.within_one) << " on "
                << acc.traces << " annotated";
        }
        out << '\n';
    }
    return kExitOk;
}

std::map<std::string, int> read_boundaries(const std::string& path) {
    auto in = open_input(path, "cut summary");
    return read_cut_boundaries(in);
}

int cmd_cut(const Options& o, std::ostream& out) {
    const Corpus corpus = load(o);
    std::map<std::string, CutResult> cuts;
    if (o.mode == "labels") {
        for (const auto& tr : corpus.traces) {
            const auto* a = corpus.annotation_for(tr.id);
            if (a == nullptr) throw DataError("trace " + tr.id + " has no labels");
            cuts.emplace(tr.id, apply_cut(tr, a->boundary));
        }
    } else if (o.mode == "model") {
        std::map<std::string, int> boundaries;
        if (!o.predictions.empty()) {
            auto in = open_input(o.predictions, "predictions");
            for (const auto& [id, p] : read_predictions_csv(in)) boundaries[id] = p.boundary;
        } else {
            require(o.model, "--model");
            for (const auto& [id, p] : predict_all(load_checkpoint(o.model), corpus)) boundaries[id] = p.boundary;
        }
        for (const auto& tr : corpus.traces) {
            auto it = boundaries.find(tr.id);
            if (it == boundaries.end()) throw DataError("no prediction for trace " + tr.id);
            cuts.emplace(tr.id, apply_cut(tr, it->second));
        }
    } else {
        // Random cuts matched to a requested removal length.
        std::map<std::string, long> reference_tokens;
        if (!o.reference.empty()) {
            const auto ref = read_boundaries(o.reference);
            for (const auto& tr : corpus.traces) {
                auto it = ref.find(tr.id);
                if (it == ref.end()) throw DataError("reference cuts lack trace " + tr.id);
                reference_tokens[tr.id] = apply_cut(tr, it->second).removed_tokens;
            }
        }
        double target = 0.0;
        if (o.target_tokens) {
            target = *o.target_tokens;
        } else if (!reference_tokens.empty()) {
            double sum = 0.0;
            for (const auto& [id, n] : reference_tokens) sum += static_cast<double>(n);
            target = sum / static_cast<double>(reference_tokens.size());
        } else {
            throw CLI::ValidationError("--target-tokens", "random cuts need --target-tokens or --reference");
        }
        if (o.per_trace && reference_tokens.empty()) {
            throw CLI::ValidationError("--per-trace", "requires --reference");
        }
        const std::uint64_t seed = o.seed.value_or(0);
        for (std::size_t i = 0; i < corpus.traces.size(); ++i) {
            const auto& tr = corpus.traces[i];
            const double t = o.per_trace ? static_cast<double>(reference_tokens.at(tr.id)) : target;
            cuts.emplace(tr.id, random_cut(tr, t, derive_seed(seed, i)));
        }
    }

    if (o.json) {
        emit_json(o.output, out, cuts_json(cuts));
    } else {
        emit(o.output, out, [&](std::ostream& s) { write_cuts_csv(s, cuts); });
    }
    if (!o.output.empty()) {
        double removed = 0.0;
        for (const auto& [id, c] : cuts) removed += static_cast<double>(c.removed_tokens);
        out << "cut " << cuts.size() << " traces (" << o.mode << "); mean removed tokens "
            << csv_real(cuts.empty() ? 0.0 : removed / static_cast<double>(cuts.size())) << '\n';
    }
    return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
    require(o.cuts, "--cuts");
    require(o.output, "--output");
    const Corpus corpus = load(o);
    const auto boundaries = read_boundaries(o.cuts);
    std::map<std::string, CutResult> cuts;
    for (const auto& tr : corpus.traces) {
        auto it = boundaries.find(tr.id);
        if (it != boundaries.end()) cuts.emplace(tr.id, apply_cut(tr, it->second));
    }
    const auto summary = export_sft(corpus, cuts, o.output);
    out << "exported " << summary.count << " examples to " << o.output << "; mean kept sentences "
        << csv_real(summary.mean_kept_sentences) << '\n';
    return kExitOk;
}

int cmd_self_consistency(const Options& o, std::ostream& out) {
    require(o.predictions, "--predictions");
    const Corpus corpus = load(o);
    auto in = open_input(o.predictions, "predictions");
    const auto report = self_consistency(read_predictions_csv(in), corpus);
    if (o.json) {
        emit_json(o.output, out, self_consistency_json(report));
    } else {
        emit(o.output, out, [&](std::ostream& s) { write_self_consistency_csv(s, report); });
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Post-conclusion continuation diagnostics and the HCC boundary proxy", "hcc"};
    app.require_subcommand(1);
    app.fallthrough();

    app.add_option("--input", o.input, "Corpus manifest (JSON lines)");
    app.add_option("--output", o.output, "Output file or directory");
    app.add_option("--seed", o.seed, "Seed for all randomness");
    app.add_option("--epsilon", o.epsilon, "Geometry guard epsilon")->check(CLI::PositiveNumber);
    app.add_option("--bins", o.bins, "Position bins for progressive curves")->check(CLI::Range(2, 1000000));
    app.add_option("--resamples", o.resamples, "Bootstrap resamples")->check(CLI::Range(100, 100000000));
    app.add_option("--config", o.config, "key=value configuration file");
    app.add_option("--threads", o.threads, "Worker thread cap")->check(CLI::Range(1, 4096));
    app.add_flag("--json", o.json, "Write JSON instead of CSV");
    app.add_flag("-v,--verbose", o.verbose, "Extra progress output on stderr");
    app.add_option("--labels", o.label_mode, "Editor label import mode")
        ->check(CLI::IsMember({"strict", "lenient"}));

    auto* validate = app.add_subcommand("validate", "Check every trace invariant");
    validate->add_option("input", o.input, "Corpus manifest");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted boundaries");
    synth->add_option("--traces", o.traces, "Trace count override")->check(CLI::NonNegativeNumber);

    auto* unc = app.add_subcommand("diagnose-uncertainty", "Sentence and answer uncertainty diagnostics");
    unc->add_option("input", o.input, "Corpus manifest");

    auto* geo = app.add_subcommand("diagnose-geometry", "Hidden-state trajectory metrics");
    geo->add_option("input", o.input, "Corpus manifest");

    auto* paired = app.add_subcommand("paired-stats", "Removed vs. retained paired table with bootstrap CIs");
    paired->add_option("input", o.input, "Corpus manifest");
    paired->add_option("--format", o.format, "csv or text")->check(CLI::IsMember({"csv", "text"}));

    auto* trn = app.add_subcommand("train", "Train the boundary proxy and write a checkpoint");
    trn->add_option("input", o.input, "Corpus manifest");
    trn->add_option("--history", o.history, "Training history path");
    trn->add_option("--epochs", o.epochs, "Epoch override")->check(CLI::PositiveNumber);

    auto* pred = app.add_subcommand("predict", "Predict boundaries and deletion probabilities");
    pred->add_option("input", o.input, "Corpus manifest");
    pred->add_option("--model", o.model, "Checkpoint");

    auto* cut = app.add_subcommand("cut", "Choose cut boundaries");
    cut->add_option("input", o.input, "Corpus manifest");
    cut->add_option("--mode", o.mode, "model, labels or random")->check(CLI::IsMember({"model", "labels", "random"}));
    cut->add_option("--model", o.model, "Checkpoint (model mode)");
    cut->add_option("--predictions", o.predictions, "Predictions CSV (model mode, instead of --model)");
    cut->add_option("--target-tokens", o.target_tokens, "Removed-token target (random mode)")
        ->check(CLI::NonNegativeNumber);
    cut->add_option("--reference", o.reference, "Cut summary whose removal lengths random cuts match");
    cut->add_flag("--per-trace", o.per_trace, "Match each trace's reference length instead of the corpus mean");

    auto* exp = app.add_subcommand("export-sft", "Write prompt/response JSON lines for cut traces");
    exp->add_option("input", o.input, "Corpus manifest");
    exp->add_option("--cuts", o.cuts, "Cut summary CSV");

    auto* sc = app.add_subcommand("self-consistency", "Removable-continuation rates of predictions");
    sc->add_option("input", o.input, "Corpus manifest");
    sc->add_option("--predictions", o.predictions, "Predictions CSV");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    omp_set_num_threads(o.threads);
    try {
        if (validate->parsed()) return cmd_validate(o, out);
        if (synth->parsed()) return cmd_synth(o, out);
        if (unc->parsed()) return cmd_uncertainty(o, out);
        if (geo->parsed()) return cmd_geometry(o, out);
        if (paired->parsed()) return cmd_paired(o, out);
        if (trn->parsed()) return cmd_train(o, out, err);
        if (pred->parsed()) return cmd_predict(o, out);
        if (cut->parsed()) return cmd_cut(o, out);
        if (exp->parsed()) return cmd_export(o, out);
        if (sc->parsed()) return cmd_self_consistency(o, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitDataError;
    }
    return kExitUsage;
}

}  // namespace hcc
