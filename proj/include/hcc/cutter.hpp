#pragma once

// Delete-only suffix cuts, the length-matched random-cut baseline, and SFT
// export.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "hcc/corpus.hpp"

namespace hcc {

struct CutResult {
    std::string id;
    int boundary = 0;
    int kept_sentences = 0;
    int removed_sentences = 0;
    long removed_tokens = 0;
    std::string text;  // kept sentences in order, then the final answer verbatim

    bool operator==(const CutResult&) const = default;
};

/// Joins sentences with a single space, or nothing when the previous text
/// already ends in a newline.
std::string join_response(const TraceRecord& trace, int boundary);

CutResult apply_cut(const TraceRecord& trace, int boundary);

/// Tokens in the suffix r_{boundary+1..T}.
long removed_token_count(const TraceRecord& trace, int boundary);

/// Boundary whose removed-suffix token count is closest to the target; ties go
/// to the larger boundary. The seed is reserved for randomized tie policies and
/// does not affect the default policy.
CutResult random_cut(const TraceRecord& trace, double target_removed_tokens, std::uint64_t seed = 0);

struct ExportSummary {
    std::size_t count = 0;
    double mean_kept_sentences = 0.0;
};

/// One JSON object per line, {"id", "prompt", "response"}, ordered by id.
ExportSummary export_sft(const Corpus& corpus, const std::map<std::string, CutResult>& cuts,
                         const std::filesystem::path& path);

}  // namespace hcc
