#pragma once

// Trace data model, manifest/sidecar formats, validation and editor labels.
//
// A corpus on disk is a JSON-lines manifest plus a binary sidecar holding the
// hidden-state rows. The sidecar path is the manifest path with its extension
// replaced by ".bin" (see sidecar_path_for).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hcc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TokenScore {
    double logprob = 0.0;  // nats, <= 0
    double entropy = 0.0;  // nats, >= 0

    bool operator==(const TokenScore&) const = default;
};

struct SentenceRecord {
    std::string text;
    int token_count = 0;
    std::vector<TokenScore> tokens;

    bool operator==(const SentenceRecord&) const = default;
};

/// Token-averaged answer scores under prefix P_t (t = 0 is the question only).
struct AnswerScore {
    int prefix_index = 0;
    double nll = 0.0;
    double entropy = 0.0;

    bool operator==(const AnswerScore&) const = default;
};

/// Row 0 is the evaluator state after the question, row t the state after
/// sentence t.
struct HiddenTrack {
    RowMatrix states;

    Eigen::Index dim() const { return states.cols(); }
    Eigen::Index rows() const { return states.rows(); }
    auto row(Eigen::Index t) const { return states.row(t); }

    bool operator==(const HiddenTrack& o) const {
        return states.rows() == o.states.rows() && states.cols() == o.states.cols() &&
               states == o.states;
    }
};

struct TraceRecord {
    std::string id;
    std::string question;
    std::vector<SentenceRecord> sentences;
    std::string final_answer;
    int answer_token_count = 1;
    std::vector<AnswerScore> answer_scores;
    HiddenTrack hidden;

    int num_sentences() const { return static_cast<int>(sentences.size()); }
    long total_tokens() const;

    bool operator==(const TraceRecord&) const = default;
};

/// Per-sentence deletion labels and the boundary c* (last retained sentence).
/// labels[t-1] == 1 iff t > boundary.
struct EditorAnnotation {
    std::vector<int> labels;
    int boundary = 0;

    bool retained(int t) const { return t <= boundary; }
    bool operator==(const EditorAnnotation&) const = default;
};

struct CorpusMetadata {
    std::string source = "unknown";
    int dim = 0;
    int version = 1;

    bool operator==(const CorpusMetadata&) const = default;
};

struct Corpus {
    std::vector<TraceRecord> traces;
    std::map<std::string, EditorAnnotation> annotations;
    CorpusMetadata metadata;

    const EditorAnnotation* annotation_for(const std::string& id) const {
        auto it = annotations.find(id);
        return it == annotations.end() ? nullptr : &it->second;
    }

    bool operator==(const Corpus&) const = default;
};

struct Violation {
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
};

/// Checks every type invariant of a trace. Violations are data, not failures.
ValidationReport validate_trace(const TraceRecord& trace);

enum class LabelMode { strict, lenient };

struct ImportedLabels {
    EditorAnnotation annotation;
    int flipped = 0;  // labels rewritten by lenient import
};

/// Builds a suffix-consistent annotation from raw 0/1 deletion marks.
/// Strict mode rejects non-suffix patterns; lenient mode keeps everything up to
/// the last retained mark.
ImportedLabels import_editor_labels(const TraceRecord& trace, std::span<const int> raw_labels,
                                    LabelMode mode);

/// Annotation implied by a boundary (labels = 1 for t > boundary).
EditorAnnotation annotation_from_boundary(int num_sentences, int boundary);

struct ParseOptions {
    LabelMode label_mode = LabelMode::strict;
    // When false, per-trace invariants are left to validate_corpus; structural
    // errors still throw.
    bool check_invariants = true;
};

std::filesystem::path sidecar_path_for(const std::filesystem::path& manifest);

/// Reads a manifest and its sidecar. Throws DataError on malformed input; the
/// message names the manifest line where applicable.
Corpus parse_corpus(const std::filesystem::path& manifest, const ParseOptions& options = {});

struct WriteSummary {
    std::size_t trace_count = 0;
    std::uintmax_t manifest_bytes = 0;
    std::uintmax_t sidecar_bytes = 0;
};

/// Writes manifest + sidecar. Hidden states are stored as 4-byte reals.
WriteSummary write_corpus(const Corpus& corpus, const std::filesystem::path& manifest);

/// Validates every trace and the corpus-level invariants (uniform dim,
/// annotation ids). Returns violations prefixed with the trace id.
ValidationReport validate_corpus(const Corpus& corpus);

}  // namespace hcc
