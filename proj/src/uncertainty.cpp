#include "hcc/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "hcc/error.hpp"

namespace hcc {

namespace {

struct Accumulator {
    std::vector<double> values;

    void add(double v) { values.push_back(v); }

    // Sample standard error; zero for a single value.
    void finish(double& mean, double& se, long& count) const {
        count = static_cast<long>(values.size());
        if (values.empty()) {
            mean = 0.0;
            se = 0.0;
            return;
        }
        double sum = 0.0;
        for (double v : values) sum += v;
        mean = sum / static_cast<double>(values.size());
        if (values.size() < 2) {
            se = 0.0;
            return;
        }
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        const double n = static_cast<double>(values.size());
        se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
};

int segment_of(const EditorAnnotation& ann, int t) { return ann.retained(t) ? 0 : 1; }

}  // namespace

const char* segment_name(Segment s) { return s == Segment::retained ? "retained" : "removed"; }

const char* position_name(BoundaryPosition p) {
    switch (p) {
        case BoundaryPosition::K1: return "K1";
        case BoundaryPosition::KT: return "KT";
        case BoundaryPosition::C1: return "C1";
        case BoundaryPosition::CT: return "CT";
    }
    return "?";
}

const char* cell_name(BoundaryCell c) {
    switch (c) {
        case BoundaryCell::entropy: return "entropy";
        case BoundaryCell::entropy_change: return "entropy_change";
        case BoundaryCell::nll: return "nll";
        case BoundaryCell::delta_ans_change: return "delta_ans_change";
    }
    return "?";
}

SentenceUncertainty sentence_uncertainty(const SentenceRecord& sentence) {
    SentenceUncertainty out;
    if (sentence.tokens.empty()) return out;
    double lp = 0.0;
    double ent = 0.0;
    for (const auto& tok : sentence.tokens) {
        lp += tok.logprob;
        ent += tok.entropy;
    }
    const double n = static_cast<double>(sentence.tokens.size());
    out.nll = -lp / n;
    out.entropy = ent / n;
    return out;
}

UncertaintySeries uncertainty_series(const TraceRecord& trace) {
    const std::size_t T = trace.sentences.size();
    UncertaintySeries s;
    s.sent_nll.resize(T);
    s.sent_entropy.resize(T);
    s.answer_nll.resize(T);
    s.answer_entropy.resize(T);
    s.delta_ans.resize(T);
    s.answer_nll_p0 = trace.answer_scores.at(0).nll;
    s.answer_entropy_p0 = trace.answer_scores.at(0).entropy;
    for (std::size_t t = 1; t <= T; ++t) {
        const auto su = sentence_uncertainty(trace.sentences[t - 1]);
        s.sent_nll[t - 1] = su.nll;
        s.sent_entropy[t - 1] = su.entropy;
        s.answer_nll[t - 1] = trace.answer_scores.at(t).nll;
        s.answer_entropy[t - 1] = trace.answer_scores.at(t).entropy;
        s.delta_ans[t - 1] = trace.answer_scores[t - 1].nll - trace.answer_scores[t].nll;
    }
    return s;
}

std::vector<UncertaintySeries> corpus_uncertainty(const Corpus& corpus) {
    std::vector<UncertaintySeries> out(corpus.traces.size());
    const long n = static_cast<long>(corpus.traces.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) out[i] = uncertainty_series(corpus.traces[i]);
    return out;
}

std::vector<UncertaintySeries> corpus_uncertainty_serial(const Corpus& corpus) {
    std::vector<UncertaintySeries> out;
    out.reserve(corpus.traces.size());
    for (const auto& tr : corpus.traces) out.push_back(uncertainty_series(tr));
    return out;
}

int position_bin(int rank, int segment_length, int bins) {
    const double pos =
        segment_length <= 1 ? 0.0 : static_cast<double>(rank - 1) / static_cast<double>(segment_length - 1);
    const int b = static_cast<int>(std::floor(pos * bins));
    return std::clamp(b, 0, bins - 1);
}

ProgressiveCurves progressive_curves(const Corpus& corpus, int bins) {
    if (bins < 2) throw DataError("bins must be >= 2");
    std::array<std::vector<Accumulator>, 2> ent{std::vector<Accumulator>(bins), std::vector<Accumulator>(bins)};
    std::array<std::vector<Accumulator>, 2> nll{std::vector<Accumulator>(bins), std::vector<Accumulator>(bins)};
    long annotated = 0;
    ProgressiveCurves curves;
    curves.bins = bins;

    for (const auto& tr : corpus.traces) {
        const auto* ann = corpus.annotation_for(tr.id);
        if (ann == nullptr) continue;
        ++annotated;
        const int T = tr.num_sentences();
        const int c = ann->boundary;
        const int len[2] = {c, T - c};
        for (int t = 1; t <= T; ++t) {
            const int seg = segment_of(*ann, t);
            const int rank = seg == 0 ? t : t - c;
            const int b = position_bin(rank, len[seg], bins);
            ent[seg][b].add(tr.answer_scores[t].entropy);
            nll[seg][b].add(tr.answer_scores[t].nll);
            ++curves.contributing_sentences;
        }
    }
    if (annotated == 0) throw DataError("corpus has no annotated traces");

    for (int seg = 0; seg < 2; ++seg) {
        curves.answer_entropy[seg].resize(bins);
        curves.answer_nll[seg].resize(bins);
        for (int b = 0; b < bins; ++b) {
            auto& e = curves.answer_entropy[seg][b];
            ent[seg][b].finish(e.mean, e.stderr_, e.count);
            auto& l = curves.answer_nll[seg][b];
            nll[seg][b].finish(l.mean, l.stderr_, l.count);
        }
    }
    return curves;
}

BoundaryQuadruple boundary_quadruple(const Corpus& corpus) {
    std::array<std::array<Accumulator, 4>, 4> acc{};
    BoundaryQuadruple q;
    for (const auto& tr : corpus.traces) {
        const auto* ann = corpus.annotation_for(tr.id);
        if (ann == nullptr) continue;
        const int T = tr.num_sentences();
        const int c = ann->boundary;
        if (c <= 0 || c >= T) {
            ++q.excluded_traces;
            continue;
        }
        ++q.eligible_traces;
        const auto s = uncertainty_series(tr);
        const int positions[4] = {1, c, c + 1, T};
        for (int p = 0; p < 4; ++p) {
            const int t = positions[p];
            acc[p][static_cast<int>(BoundaryCell::entropy)].add(s.sent_entropy[t - 1]);
            acc[p][static_cast<int>(BoundaryCell::nll)].add(s.sent_nll[t - 1]);
            if (t >= 2) {
                acc[p][static_cast<int>(BoundaryCell::entropy_change)].add(s.sent_entropy[t - 1] -
                                                                           s.sent_entropy[t - 2]);
                acc[p][static_cast<int>(BoundaryCell::delta_ans_change)].add(s.delta_ans[t - 1] -
                                                                             s.delta_ans[t - 2]);
            } else {
                ++q.cells[p][static_cast<int>(BoundaryCell::entropy_change)].skipped;
                ++q.cells[p][static_cast<int>(BoundaryCell::delta_ans_change)].skipped;
            }
        }
    }
    if (q.eligible_traces == 0) throw DataError("no trace with 0 < c* < T for the boundary quadruple");
    for (int p = 0; p < 4; ++p) {
        for (int c = 0; c < 4; ++c) {
            auto& cell = q.cells[p][c];
            double mean = 0.0;
            acc[p][c].finish(mean, cell.stderr_, cell.count);
            if (cell.count > 0) cell.mean = mean;
        }
    }
    return q;
}

PerturbationStats perturbation_stats(const Corpus& corpus) {
    PerturbationStats out;
    for (const auto& tr : corpus.traces) {
        const auto* ann = corpus.annotation_for(tr.id);
        if (ann == nullptr) continue;
        const int T = tr.num_sentences();
        for (int t = 1; t <= T; ++t) {
            const int seg = segment_of(*ann, t);
            const double change = std::abs(tr.answer_scores[t].nll - tr.answer_scores[t - 1].nll);
            out.nll[seg].push_back(change);
            out.logprob[seg].push_back(change);
        }
    }
    return out;
}

}  // namespace hcc
