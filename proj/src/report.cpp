#include "hcc/report.hpp"

#include <iomanip>
#include <istream>
#include <sstream>

#include "hcc/error.hpp"
#include "hcc/kv_config.hpp"

namespace hcc {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Segment segment_of(const EditorAnnotation* a, int t) {
    return a == nullptr || a->retained(t) ? Segment::retained : Segment::removed;
}

std::string segment_label(const EditorAnnotation* a, int t) {
    return a == nullptr ? "" : segment_name(segment_of(a, t));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

// Reads a CSV with a header row; returns rows keyed by column name.
std::vector<std::map<std::string, std::string>> read_csv(std::istream& in, std::span<const char* const> required) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input");
    const auto header = split_csv_line(line);
    for (const char* col : required) {
        if (std::find(header.begin(), header.end(), col) == header.end()) {
            throw DataError(std::string("CSV missing column: ") + col);
        }
    }
    std::vector<std::map<std::string, std::string>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " columns");
        }
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

int parse_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("cannot parse ") + what + ": \"" + s + "\"");
    }
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("cannot parse ") + what + ": \"" + s + "\"");
    }
}

Json bin_json(const BinStat& b) {
    Json j;
    j["mean"] = b.empty() ? Json(nullptr) : Json(b.mean);
    j["stderr"] = b.empty() ? Json(nullptr) : Json(b.stderr_);
    j["count"] = b.count;
    j["empty"] = b.empty();
    return j;
}

}  // namespace

std::string csv_real(double v) { return format_real(v); }

std::string csv_real(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

void write_uncertainty_csv(std::ostream& out, const Corpus& corpus, std::span<const UncertaintySeries> series) {
    out << "id,t,segment,sent_nll,sent_entropy,answer_nll,answer_entropy,delta_ans\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& tr = corpus.traces[i];
        const auto* a = corpus.annotation_for(tr.id);
        const auto& s = series[i];
        for (std::size_t k = 0; k < s.size(); ++k) {
            const int t = static_cast<int>(k) + 1;
            out << csv_field(tr.id) << ',' << t << ',' << segment_label(a, t) << ',' << csv_real(s.sent_nll[k]) << ','
                << csv_real(s.sent_entropy[k]) << ',' << csv_real(s.answer_nll[k]) << ','
                << csv_real(s.answer_entropy[k]) << ',' << csv_real(s.delta_ans[k]) << '\n';
        }
    }
}

Json uncertainty_json(const Corpus& corpus, std::span<const UncertaintySeries> series) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        Json j;
        j["id"] = corpus.traces[i].id;
        j["answer_nll_p0"] = s.answer_nll_p0;
        j["answer_entropy_p0"] = s.answer_entropy_p0;
        j["sent_nll"] = s.sent_nll;
        j["sent_entropy"] = s.sent_entropy;
        j["answer_nll"] = s.answer_nll;
        j["answer_entropy"] = s.answer_entropy;
        j["delta_ans"] = s.delta_ans;
        arr.push_back(std::move(j));
    }
    return arr;
}

void write_curves_csv(std::ostream& out, const ProgressiveCurves& curves) {
    out << "quantity,segment,bin,mean,stderr,count,empty\n";
    auto emit = [&](const char* name, const std::array<std::vector<BinStat>, 2>& data) {
        for (int s = 0; s < 2; ++s) {
            for (int b = 0; b < curves.bins; ++b) {
                const auto& st = data[s][b];
                out << name << ',' << segment_name(static_cast<Segment>(s)) << ',' << b << ','
                    << (st.empty() ? "" : csv_real(st.mean)) << ',' << (st.empty() ? "" : csv_real(st.stderr_)) << ','
                    << st.count << ',' << (st.empty() ? 1 : 0) << '\n';
            }
        }
    };
    emit("answer_entropy", curves.answer_entropy);
    emit("answer_nll", curves.answer_nll);
}

Json curves_json(const ProgressiveCurves& curves) {
    Json j;
    j["bins"] = curves.bins;
    j["contributing_sentences"] = curves.contributing_sentences;
    auto emit = [&](const std::array<std::vector<BinStat>, 2>& data) {
        Json q;
        for (int s = 0; s < 2; ++s) {
            Json bins = Json::array();
            for (const auto& b : data[s]) bins.push_back(bin_json(b));
            q[segment_name(static_cast<Segment>(s))] = std::move(bins);
        }
        return q;
    };
    j["answer_entropy"] = emit(curves.answer_entropy);
    j["answer_nll"] = emit(curves.answer_nll);
    return j;
}

void write_quadruple_csv(std::ostream& out, const BoundaryQuadruple& q) {
    out << "position,cell,mean,stderr,count,skipped\n";
    for (int p = 0; p < 4; ++p) {
        for (int c = 0; c < 4; ++c) {
            const auto& st = q.cells[p][c];
            out << position_name(static_cast<BoundaryPosition>(p)) << ',' << cell_name(static_cast<BoundaryCell>(c))
                << ',' << csv_real(st.mean) << ',' << (st.mean ? csv_real(st.stderr_) : "") << ',' << st.count << ','
                << st.skipped << '\n';
        }
    }
}

Json quadruple_json(const BoundaryQuadruple& q) {
    Json j;
    j["eligible_traces"] = q.eligible_traces;
    j["excluded_traces"] = q.excluded_traces;
    Json cells = Json::array();
    for (int p = 0; p < 4; ++p) {
        for (int c = 0; c < 4; ++c) {
            const auto& st = q.cells[p][c];
            Json cell;
            cell["position"] = position_name(static_cast<BoundaryPosition>(p));
            cell["cell"] = cell_name(static_cast<BoundaryCell>(c));
            cell["mean"] = opt_json(st.mean);
            cell["stderr"] = st.mean ? Json(st.stderr_) : Json(nullptr);
            cell["count"] = st.count;
            cell["skipped"] = st.skipped;
            cells.push_back(std::move(cell));
        }
    }
    j["cells"] = std::move(cells);
    return j;
}

void write_perturbation_csv(std::ostream& out, const PerturbationStats& p) {
    out << "kind,segment,value\n";
    for (int s = 0; s < 2; ++s) {
        for (double v : p.nll[s]) out << "nll," << segment_name(static_cast<Segment>(s)) << ',' << csv_real(v) << '\n';
    }
    for (int s = 0; s < 2; ++s) {
        for (double v : p.logprob[s]) {
            out << "logprob," << segment_name(static_cast<Segment>(s)) << ',' << csv_real(v) << '\n';
        }
    }
}

Json perturbation_json(const PerturbationStats& p) {
    Json j;
    for (const char* kind : {"nll", "logprob"}) {
        const auto& data = std::string(kind) == "nll" ? p.nll : p.logprob;
        Json k;
        for (int s = 0; s < 2; ++s) k[segment_name(static_cast<Segment>(s))] = data[s];
        j[kind] = std::move(k);
    }
    return j;
}

void write_geometry_csv(std::ostream& out, const Corpus& corpus, std::span<const GeometrySeries> series) {
    out << "id,t,segment";
    for (auto m : kGeometryMetrics) out << ',' << metric_name(m);
    out << '\n';
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& tr = corpus.traces[i];
        const auto* a = corpus.annotation_for(tr.id);
        for (std::size_t k = 0; k < series[i].size(); ++k) {
            const int t = static_cast<int>(k) + 1;
            out << csv_field(tr.id) << ',' << t << ',' << segment_label(a, t);
            for (auto m : kGeometryMetrics) out << ',' << csv_real(metric_value(series[i], m, t));
            out << '\n';
        }
    }
}

Json geometry_json(const Corpus& corpus, std::span<const GeometrySeries> series) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        Json j;
        j["id"] = corpus.traces[i].id;
        j["epsilon"] = s.epsilon;
        for (auto m : kGeometryMetrics) {
            Json values = Json::array();
            for (std::size_t k = 0; k < s.size(); ++k) values.push_back(opt_json(metric_value(s, m, static_cast<int>(k) + 1)));
            j[std::string(metric_name(m))] = std::move(values);
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

void write_group_means_csv(std::ostream& out, const Corpus& corpus, std::span<const GeometrySeries> series) {
    out << "id,metric,retained,removed\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& tr = corpus.traces[i];
        const auto* a = corpus.annotation_for(tr.id);
        if (a == nullptr) continue;
        const auto g = group_means(series[i], *a);
        for (auto m : kGeometryMetrics) {
            out << csv_field(tr.id) << ',' << metric_name(m) << ',' << csv_real(g[m].retained) << ','
                << csv_real(g[m].removed) << '\n';
        }
    }
}

Json group_means_json(const Corpus& corpus, std::span<const GeometrySeries> series) {
    Json arr = Json::array();
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& tr = corpus.traces[i];
        const auto* a = corpus.annotation_for(tr.id);
        if (a == nullptr) continue;
        const auto g = group_means(series[i], *a);
        Json j;
        j["id"] = tr.id;
        for (auto m : kGeometryMetrics) {
            Json pair;
            pair["retained"] = opt_json(g[m].retained);
            pair["removed"] = opt_json(g[m].removed);
            j[std::string(metric_name(m))] = std::move(pair);
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<MetricPairs> geometry_pairs(const Corpus& corpus, std::span<const GeometrySeries> series) {
    std::vector<MetricPairs> out;
    for (auto m : kGeometryMetrics) out.push_back({std::string(metric_name(m)), {}});
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto* a = corpus.annotation_for(corpus.traces[i].id);
        if (a == nullptr) continue;
        const auto g = group_means(series[i], *a);
        for (auto m : kGeometryMetrics) {
            out[static_cast<int>(m)].removed_retained.emplace_back(g[m].removed, g[m].retained);
        }
    }
    return out;
}

void write_paired_csv(std::ostream& out, std::span<const PairedRow> rows) {
    out << "metric,removed_mean,retained_mean,delta_mean,frac_removed_lower,frac_removed_higher,ci_low,ci_high,"
           "eligible,excluded\n";
    for (const auto& r : rows) {
        out << csv_field(r.metric) << ',' << csv_real(r.removed_mean) << ',' << csv_real(r.retained_mean) << ','
            << csv_real(r.delta_mean) << ',' << csv_real(r.frac_removed_lower) << ','
            << csv_real(r.frac_removed_higher) << ',' << csv_real(r.ci_low) << ',' << csv_real(r.ci_high) << ','
            << r.eligible << ',' << r.excluded << '\n';
    }
}

void write_paired_text(std::ostream& out, std::span<const PairedRow> rows) {
    std::size_t width = 6;
    for (const auto& r : rows) width = std::max(width, r.metric.size());
    const auto flags = out.flags();
    out << std::left << std::setw(static_cast<int>(width)) << "metric" << std::right << std::setw(12) << "removed"
        << std::setw(12) << "retained" << std::setw(12) << "lower" << std::setw(12) << "higher" << std::setw(26)
        << "CI(delta)" << std::setw(8) << "n" << '\n';
    for (const auto& r : rows) {
        std::ostringstream ci;
        ci << std::fixed << std::setprecision(4) << '[' << r.ci_low << ", " << r.ci_high << ']';
        out << std::left << std::setw(static_cast<int>(width)) << r.metric << std::right << std::fixed
            << std::setprecision(4) << std::setw(12) << r.removed_mean << std::setw(12) << r.retained_mean
            << std::setprecision(2) << std::setw(12) << r.frac_removed_lower << std::setw(12)
            << r.frac_removed_higher << std::setw(26) << ci.str() << std::setw(8) << r.eligible << '\n';
    }
    out.flags(flags);
}

Json paired_json(std::span<const PairedRow> rows, const BootstrapOptions& options) {
    Json j;
    j["resamples"] = options.resamples;
    j["seed"] = options.seed;
    j["level"] = options.level;
    j["rng"] = "ctr64 v1";
    Json arr = Json::array();
    for (const auto& r : rows) {
        Json row;
        row["metric"] = r.metric;
        row["removed_mean"] = r.removed_mean;
        row["retained_mean"] = r.retained_mean;
        row["delta_mean"] = r.delta_mean;
        row["frac_removed_lower"] = r.frac_removed_lower;
        row["frac_removed_higher"] = r.frac_removed_higher;
        row["ci_low"] = r.ci_low;
        row["ci_high"] = r.ci_high;
        row["eligible"] = r.eligible;
        row["excluded"] = r.excluded;
        arr.push_back(std::move(row));
    }
    j["rows"] = std::move(arr);
    return j;
}

void write_ecdf_csv(std::ostream& out, const std::string& name, std::span<const EcdfPoint> points) {
    for (const auto& p : points) out << csv_field(name) << ',' << csv_real(p.x) << ',' << csv_real(p.fraction) << '\n';
}

void write_self_consistency_csv(std::ostream& out, const SelfConsistencyReport& r) {
    out << "phase_rate,sentence_ratio,avg_len,traces\n"
        << csv_real(r.phase_rate) << ',' << csv_real(r.sentence_ratio) << ',' << csv_real(r.avg_len) << ','
        << r.traces << '\n';
}

Json self_consistency_json(const SelfConsistencyReport& r) {
    Json j;
    j["phase_rate"] = r.phase_rate;
    j["sentence_ratio"] = r.sentence_ratio;
    j["avg_len"] = r.avg_len;
    j["traces"] = r.traces;
    return j;
}

void write_history_csv(std::ostream& out, std::span<const EpochStats> history) {
    out << "epoch,cut,del,kl,ent,geo,total\n";
    for (const auto& e : history) {
        const auto& l = e.mean;
        out << e.epoch << ',' << csv_real(l.cut) << ',' << csv_real(l.del) << ',' << csv_real(l.kl) << ','
            << csv_real(l.ent) << ',' << csv_real(l.geo) << ',' << csv_real(l.total) << '\n';
    }
}

Json history_json(std::span<const EpochStats> history) {
    Json arr = Json::array();
    for (const auto& e : history) {
        Json j;
        j["epoch"] = e.epoch;
        j["cut"] = e.mean.cut;
        j["del"] = e.mean.del;
        j["kl"] = e.mean.kl;
        j["ent"] = e.mean.ent;
        j["geo"] = e.mean.geo;
        j["total"] = e.mean.total;
        arr.push_back(std::move(j));
    }
    return arr;
}

void write_predictions_csv(std::ostream& out, std::span<const NamedPrediction> predictions) {
    out << "id,boundary,sentences,delete_probs\n";
    for (const auto& [id, p] : predictions) {
        out << csv_field(id) << ',' << p.boundary << ',' << p.delete_probs.size() << ',';
        for (std::size_t k = 0; k < p.delete_probs.size(); ++k) {
            if (k > 0) out << ';';
            out << csv_real(p.delete_probs[k]);
        }
        out << '\n';
    }
}

Json predictions_json(std::span<const NamedPrediction> predictions) {
    Json arr = Json::array();
    for (const auto& [id, p] : predictions) {
        Json j;
        j["id"] = id;
        j["boundary"] = p.boundary;
        j["delete_probs"] = p.delete_probs;
        j["uncertainty"] = p.uncertainty;
        j["progress"] = p.progress;
        j["cut_logits"] = p.cut_logits;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::map<std::string, CutPrediction> read_predictions_csv(std::istream& in) {
    static constexpr const char* kRequired[] = {"id", "boundary", "delete_probs"};
    std::map<std::string, CutPrediction> out;
    for (const auto& row : read_csv(in, kRequired)) {
        CutPrediction p;
        p.boundary = parse_int(row.at("boundary"), "boundary");
        std::stringstream probs(row.at("delete_probs"));
        std::string cell;
        while (std::getline(probs, cell, ';')) {
            p.delete_flags.push_back(parse_double(cell, "delete probability") >= 0.5 ? 1 : 0);
        }
        if (!out.emplace(row.at("id"), std::move(p)).second) throw DataError("duplicate prediction id " + row.at("id"));
    }
    return out;
}

void write_cuts_csv(std::ostream& out, const std::map<std::string, CutResult>& cuts) {
    out << "id,boundary,kept_sentences,removed_sentences,removed_tokens\n";
    for (const auto& [id, c] : cuts) {
        out << csv_field(id) << ',' << c.boundary << ',' << c.kept_sentences << ',' << c.removed_sentences << ','
            << c.removed_tokens << '\n';
    }
}

Json cuts_json(const std::map<std::string, CutResult>& cuts) {
    Json arr = Json::array();
    for (const auto& [id, c] : cuts) {
        Json j;
        j["id"] = id;
        j["boundary"] = c.boundary;
        j["kept_sentences"] = c.kept_sentences;
        j["removed_sentences"] = c.removed_sentences;
        j["removed_tokens"] = c.removed_tokens;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::map<std::string, int> read_cut_boundaries(std::istream& in) {
    static constexpr const char* kRequired[] = {"id", "boundary"};
    std::map<std::string, int> out;
    for (const auto& row : read_csv(in, kRequired)) {
        if (!out.emplace(row.at("id"), parse_int(row.at("boundary"), "boundary")).second) {
            throw DataError("duplicate cut id " + row.at("id"));
        }
    }
    return out;
}

}  // namespace hcc
