#pragma once

// Sentence- and answer-level uncertainty diagnostics over stored token scores.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hcc/corpus.hpp"

namespace hcc {

struct SentenceUncertainty {
    double nll = 0.0;
    double entropy = 0.0;
};

/// Token-averaged NLL and predictive entropy of one sentence.
SentenceUncertainty sentence_uncertainty(const SentenceRecord& sentence);

/// Per-sentence values, index t-1 for sentence t. answer_nll[t-1] is the
/// score under prefix P_t; the question-only prefix P_0 is kept separately.
struct UncertaintySeries {
    std::vector<double> sent_nll;
    std::vector<double> sent_entropy;
    std::vector<double> answer_nll;
    std::vector<double> answer_entropy;
    std::vector<double> delta_ans;  // answer_nll(P_{t-1}) - answer_nll(P_t)
    double answer_nll_p0 = 0.0;
    double answer_entropy_p0 = 0.0;

    std::size_t size() const { return sent_nll.size(); }
};

UncertaintySeries uncertainty_series(const TraceRecord& trace);

/// Series for every trace; OpenMP over traces, output in corpus order.
std::vector<UncertaintySeries> corpus_uncertainty(const Corpus& corpus);
/// Single-threaded reference for corpus_uncertainty.
std::vector<UncertaintySeries> corpus_uncertainty_serial(const Corpus& corpus);

struct BinStat {
    double mean = 0.0;
    double stderr_ = 0.0;
    long count = 0;
    bool empty() const { return count == 0; }
};

enum class Segment { retained = 0, removed = 1 };
const char* segment_name(Segment s);

/// Binned answer entropy / answer NLL against position normalized within the
/// retained and removed segments separately.
struct ProgressiveCurves {
    int bins = 0;
    // [segment][bin]
    std::array<std::vector<BinStat>, 2> answer_entropy;
    std::array<std::vector<BinStat>, 2> answer_nll;
    long contributing_sentences = 0;
};

/// Bin of a 1-based rank within a segment of the given length.
int position_bin(int rank, int segment_length, int bins);

ProgressiveCurves progressive_curves(const Corpus& corpus, int bins);

enum class BoundaryPosition { K1 = 0, KT = 1, C1 = 2, CT = 3 };
enum class BoundaryCell { entropy = 0, entropy_change = 1, nll = 2, delta_ans_change = 3 };
const char* position_name(BoundaryPosition p);
const char* cell_name(BoundaryCell c);

struct CellStat {
    std::optional<double> mean;  // absent when no trace contributed
    double stderr_ = 0.0;
    long count = 0;
    long skipped = 0;  // eligible traces lacking a previous sentence
};

/// Sentence statistics at the first/last retained and removed sentences,
/// aggregated over traces with 0 < c* < T.
struct BoundaryQuadruple {
    std::array<std::array<CellStat, 4>, 4> cells{};  // [position][cell]
    long eligible_traces = 0;
    long excluded_traces = 0;

    const CellStat& at(BoundaryPosition p, BoundaryCell c) const {
        return cells[static_cast<int>(p)][static_cast<int>(c)];
    }
};

BoundaryQuadruple boundary_quadruple(const Corpus& corpus);

/// Per-sentence absolute answer-score change grouped by segment.
struct PerturbationStats {
    std::array<std::vector<double>, 2> nll;      // [segment]
    std::array<std::vector<double>, 2> logprob;  // [segment]
};

PerturbationStats perturbation_stats(const Corpus& corpus);

}  // namespace hcc
